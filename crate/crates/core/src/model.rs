//! The fusion classifier: a small residual CNN over the image, a single
//! linear layer over proprioception, concatenation, and two fully connected
//! layers producing self / environment logits.
//!
//! Feature widths along the default pipeline:
//!
//! ```text
//! image  -> backbone -> projection ----------> 19 --+
//!                                                   +-- concat 95 -> FC1 -> relu -> 32 -> FC2 -> 2
//! proprio -> standardise -> FC0 -> relu -----> 76 --+
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::to_canonical_string;
use crate::kernels::softmax_rows;
use crate::synth::{Label, Sample};
use crate::tape::{Mode, RunningStats, Tape, Var};
use crate::tensor::{read_u32, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"L1SA0001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// Output width of each residual block; every block downsamples by `block_stride`.
    pub block_widths: Vec<usize>,
    pub block_stride: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec { stem_channels: 16, stem_kernel: 4, stem_stride: 4, block_widths: vec![16, 32, 64], block_stride: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelOneConfig {
    /// `(height, width)` of input images.
    pub image_size: (usize, usize),
    pub vision_feature_dim: usize,
    pub proprio_input_dim: usize,
    pub fc0_out: usize,
    pub concat_dim: usize,
    pub fc1_out: usize,
    pub num_classes: usize,
    pub backbone: BackboneSpec,
    pub bn_momentum: f32,
    pub bn_eps: f32,
    pub seed: u64,
}

impl Default for LevelOneConfig {
    fn default() -> Self {
        LevelOneConfig {
            image_size: (64, 64),
            vision_feature_dim: 19,
            proprio_input_dim: 18,
            fc0_out: 76,
            concat_dim: 95,
            fc1_out: 32,
            num_classes: 2,
            backbone: BackboneSpec::default(),
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            seed: 0,
        }
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

impl LevelOneConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vision_feature_dim,
            self.proprio_input_dim,
            self.fc0_out,
            self.concat_dim,
            self.fc1_out,
            self.backbone.stem_channels,
            self.backbone.stem_kernel,
            self.backbone.stem_stride,
            self.backbone.block_stride,
        ];
        if dims.iter().any(|&d| d == 0) || self.backbone.block_widths.iter().any(|&d| d == 0) {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if self.concat_dim != self.vision_feature_dim + self.fc0_out {
            return Err(Error::Config(format!(
                "concat_dim {} != vision_feature_dim {} + fc0_out {}",
                self.concat_dim, self.vision_feature_dim, self.fc0_out
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::Config(format!("num_classes must be 2, got {}", self.num_classes)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return Err(Error::Config("batchnorm momentum must be in (0, 1] and eps positive".into()));
        }
        let b = &self.backbone;
        let mut hw = [self.image_size.0, self.image_size.1];
        for s in &mut hw {
            *s = conv_out(*s, b.stem_kernel, b.stem_stride, 0)
                .ok_or_else(|| Error::Config("image smaller than the stem kernel".into()))?;
            for _ in &b.block_widths {
                *s = conv_out(*s, 3, b.block_stride, 1).filter(|&v| v > 0).ok_or_else(|| {
                    Error::Config("image too small for the residual stages".into())
                })?;
            }
        }
        Ok(())
    }

    pub fn backbone_out_channels(&self) -> usize {
        *self.backbone.block_widths.last().unwrap_or(&self.backbone.stem_channels)
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    stats: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: ConvBn,
    conv2: ConvBn,
    proj: Option<ConvBn>,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    stem: ConvBn,
    blocks: Vec<Block>,
    vision_proj: Dense,
    fc0: Dense,
    fc1: Dense,
    fc2: Dense,
}

/// Which fully connected layer to read weights from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LayerId {
    VisionProjection,
    Fc0,
    Fc1,
    #[default]
    Fc2,
}

impl LayerId {
    pub fn parse(s: &str) -> Option<LayerId> {
        match s {
            "vision-projection" => Some(LayerId::VisionProjection),
            "fc0" => Some(LayerId::Fc0),
            "fc1" => Some(LayerId::Fc1),
            "fc2" => Some(LayerId::Fc2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerId::VisionProjection => "vision-projection",
            LayerId::Fc0 => "fc0",
            LayerId::Fc1 => "fc1",
            LayerId::Fc2 => "fc2",
        }
    }
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    stats: Vec<RunningStats>,
    config: &'a LevelOneConfig,
}

impl Builder<'_> {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t.with_grad());
        self.tensors.len() - 1
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> ConvBn {
        let w = Tensor::he_uniform(&[cout, cin, k, k], cin * k * k, &mut self.rng);
        let weight = self.push(format!("{name}.weight"), w);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        let gamma = self.push(format!("{name}.bn.gamma"), Tensor::full(&[cout], 1.0));
        let beta = self.push(format!("{name}.bn.beta"), Tensor::zeros(&[cout]));
        let mut rs = RunningStats::new(cout);
        rs.momentum = self.config.bn_momentum;
        rs.eps = self.config.bn_eps;
        self.stats.push(rs);
        ConvBn { weight, bias, gamma, beta, stats: self.stats.len() - 1, stride, pad }
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize) -> Dense {
        let w = Tensor::he_uniform(&[outputs, inputs], inputs, &mut self.rng);
        let weight = self.push(format!("{name}.weight"), w);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Dense { weight, bias }
    }
}

fn build(config: &LevelOneConfig) -> (Layout, Vec<String>, Vec<Tensor>, Vec<RunningStats>) {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        names: Vec::new(),
        tensors: Vec::new(),
        stats: Vec::new(),
        config,
    };
    let bb = &config.backbone;
    let stem = b.conv_bn("stem", 3, bb.stem_channels, bb.stem_kernel, bb.stem_stride, 0);
    let mut cin = bb.stem_channels;
    let mut blocks = Vec::new();
    for (i, &width) in bb.block_widths.iter().enumerate() {
        let name = format!("block{}", i + 1);
        let conv1 = b.conv_bn(&format!("{name}.conv1"), cin, width, 3, bb.block_stride, 1);
        let conv2 = b.conv_bn(&format!("{name}.conv2"), width, width, 3, 1, 1);
        let proj = (bb.block_stride != 1 || cin != width)
            .then(|| b.conv_bn(&format!("{name}.proj"), cin, width, 1, bb.block_stride, 0));
        blocks.push(Block { conv1, conv2, proj });
        cin = width;
    }
    let vision_proj = b.dense("vision_proj", config.backbone_out_channels(), config.vision_feature_dim);
    let fc0 = b.dense("fc0", config.proprio_input_dim, config.fc0_out);
    let fc1 = b.dense("fc1", config.concat_dim, config.fc1_out);
    let fc2 = b.dense("fc2", config.fc1_out, config.num_classes);
    let layout = Layout { stem, blocks, vision_proj, fc0, fc1, fc2 };
    (layout, b.names, b.tensors, b.stats)
}

/// All learnable tensors of the fusion model plus its non-learnable state
/// (batchnorm running statistics and proprioception standardisation).
#[derive(Debug, Clone)]
pub struct LevelOneParams {
    pub config: LevelOneConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    stats: Vec<RunningStats>,
    proprio_mean: Vec<f32>,
    proprio_std: Vec<f32>,
}

/// Vars recorded by one traced forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub params: Vec<Var>,
    pub image: Var,
    pub vision_feature: Var,
    pub proprio_feature: Var,
    pub fused: Var,
    pub hidden: Var,
    pub logits: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub confidence: f32,
}

/// Argmax of the softmax with ties going to label 0.
pub fn predict_from_logits(logits: &[f32]) -> Prediction {
    let p = softmax_rows(logits, logits.len());
    let mut best = 0;
    for i in 1..p.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    Prediction { label: Label::from_index(best).expect("two-class head"), confidence: p[best] }
}

fn conv_bn(
    tape: &mut Tape,
    x: Var,
    l: &ConvBn,
    vars: &[Var],
    stats: &mut [RunningStats],
    mode: Mode,
) -> Result<Var> {
    let y = tape.conv2d(x, vars[l.weight], vars[l.bias], l.stride, l.pad)?;
    tape.batchnorm2d(y, vars[l.gamma], vars[l.beta], &mut stats[l.stats], mode)
}

impl LevelOneParams {
    pub fn init(config: LevelOneConfig) -> Result<Self> {
        config.validate()?;
        let (layout, names, tensors, stats) = build(&config);
        let d = config.proprio_input_dim;
        Ok(LevelOneParams {
            config,
            layout,
            names,
            tensors,
            stats,
            proprio_mean: vec![0.0; d],
            proprio_std: vec![1.0; d],
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named_tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn layer_weights(&self, layer: LayerId) -> &Tensor {
        let d = match layer {
            LayerId::VisionProjection => self.layout.vision_proj,
            LayerId::Fc0 => self.layout.fc0,
            LayerId::Fc1 => self.layout.fc1,
            LayerId::Fc2 => self.layout.fc2,
        };
        &self.tensors[d.weight]
    }

    /// Names of the tensors that belong to the image path.
    pub fn vision_tensor_names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str).filter(|n| n.starts_with("stem") || n.starts_with("block") || n.starts_with("vision_proj"))
    }

    pub fn proprio_normalization(&self) -> (&[f32], &[f32]) {
        (&self.proprio_mean, &self.proprio_std)
    }

    pub fn set_proprio_normalization(&mut self, mean: Vec<f32>, std: Vec<f32>) -> Result<()> {
        let d = self.config.proprio_input_dim;
        if mean.len() != d || std.len() != d || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Dimension(format!("proprio normalisation needs {d} means and positive deviations")));
        }
        self.proprio_mean = mean;
        self.proprio_std = std;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the tape gradients of a traced pass into the parameter tensors.
    pub fn accumulate_grads(&mut self, tape: &Tape, trace: &Trace) {
        for (t, &v) in self.tensors.iter_mut().zip(&trace.params) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    fn check_inputs(&self, images: &Tensor, proprio: &Tensor) -> Result<usize> {
        let (h, w) = self.config.image_size;
        let n = images.shape()[0];
        if images.shape() != [n, 3, h, w] {
            return Err(Error::Dimension(format!("image batch {:?}, expected [N, 3, {h}, {w}]", images.shape())));
        }
        if proprio.shape() != [n, self.config.proprio_input_dim] {
            return Err(Error::Dimension(format!(
                "proprio batch {:?}, expected [{n}, {}]",
                proprio.shape(),
                self.config.proprio_input_dim
            )));
        }
        Ok(n)
    }

    fn standardise(&self, proprio: &Tensor) -> Tensor {
        let d = self.config.proprio_input_dim;
        let mut data = proprio.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.proprio_mean).zip(&self.proprio_std) {
                *v = (*v - m) / s;
            }
        }
        Tensor::new(proprio.shape(), data).expect("same shape")
    }

    /// Records the full forward pass on `tape`. Train mode uses batch
    /// statistics and updates the running statistics.
    pub fn trace(
        &mut self,
        tape: &mut Tape,
        images: Tensor,
        proprio: &Tensor,
        mode: Mode,
    ) -> Result<Trace> {
        if mode == Mode::Train {
            let mut stats = std::mem::take(&mut self.stats);
            let r = self.trace_with(tape, images, proprio, mode, &mut stats);
            self.stats = stats;
            r
        } else {
            self.trace_eval(tape, images, proprio)
        }
    }

    /// Eval-mode trace; leaves the parameters untouched.
    pub fn trace_eval(&self, tape: &mut Tape, images: Tensor, proprio: &Tensor) -> Result<Trace> {
        let mut stats = self.stats.clone();
        self.trace_with(tape, images, proprio, Mode::Eval, &mut stats)
    }

    fn trace_with(
        &self,
        tape: &mut Tape,
        images: Tensor,
        proprio: &Tensor,
        mode: Mode,
        stats: &mut [RunningStats],
    ) -> Result<Trace> {
        self.check_inputs(&images, proprio)?;
        let params: Vec<Var> = self.tensors.iter().map(|t| tape.param(t)).collect();
        let image = tape.leaf(images);
        let vision_feature = self.vision_path(tape, image, &params, stats, mode)?;
        let p = tape.leaf(self.standardise(proprio));
        let l = &self.layout;
        let p = tape.linear(p, params[l.fc0.weight], params[l.fc0.bias])?;
        let proprio_feature = tape.relu(p);
        let (fused, hidden, logits) = self.head_on(tape, vision_feature, proprio_feature, &params)?;
        Ok(Trace { params, image, vision_feature, proprio_feature, fused, hidden, logits })
    }

    fn vision_path(
        &self,
        tape: &mut Tape,
        image: Var,
        vars: &[Var],
        stats: &mut [RunningStats],
        mode: Mode,
    ) -> Result<Var> {
        let l = &self.layout;
        let x = conv_bn(tape, image, &l.stem, vars, stats, mode)?;
        let mut x = tape.relu(x);
        for block in &l.blocks {
            let y = conv_bn(tape, x, &block.conv1, vars, stats, mode)?;
            let y = tape.relu(y);
            let y = conv_bn(tape, y, &block.conv2, vars, stats, mode)?;
            let skip = match &block.proj {
                Some(p) => conv_bn(tape, x, p, vars, stats, mode)?,
                None => x,
            };
            let sum = tape.add(y, skip)?;
            x = tape.relu(sum);
        }
        let pooled = tape.global_avg_pool(x)?;
        tape.linear(pooled, vars[l.vision_proj.weight], vars[l.vision_proj.bias])
    }

    fn head_on(&self, tape: &mut Tape, vision: Var, proprio: Var, vars: &[Var]) -> Result<(Var, Var, Var)> {
        let l = &self.layout;
        let fused = tape.concat(vision, proprio)?;
        let h = tape.linear(fused, vars[l.fc1.weight], vars[l.fc1.bias])?;
        let hidden = tape.relu(h);
        let logits = tape.linear(hidden, vars[l.fc2.weight], vars[l.fc2.bias])?;
        Ok((fused, hidden, logits))
    }

    /// Eval-mode logits `N x 2`.
    pub fn forward(&self, images: &Tensor, proprio: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let tr = self.trace_eval(&mut tape, images.clone(), proprio)?;
        Ok(tape.value(tr.logits).clone())
    }

    pub fn forward_mode(&mut self, images: &Tensor, proprio: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let tr = self.trace(&mut tape, images.clone(), proprio, mode)?;
        Ok(tape.value(tr.logits).clone())
    }

    pub fn predict(&self, images: &Tensor, proprio: &Tensor) -> Result<Vec<Prediction>> {
        let logits = self.forward(images, proprio)?;
        Ok(logits.data().chunks_exact(self.config.num_classes).map(predict_from_logits).collect())
    }

    /// Pre-concatenation activations `(vision N x 19, proprio N x 76)` of
    /// the eval-mode pass.
    pub fn feature_split(&self, images: &Tensor, proprio: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let tr = self.trace_eval(&mut tape, images.clone(), proprio)?;
        Ok((tape.value(tr.vision_feature).clone(), tape.value(tr.proprio_feature).clone()))
    }

    /// FC2(relu(FC1(concat(vision, proprio)))) on precomputed features.
    pub fn head(&self, vision: &Tensor, proprio_feature: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.param(t)).collect();
        let v = tape.leaf(vision.clone());
        let p = tape.leaf(proprio_feature.clone());
        let (_, _, logits) = self.head_on(&mut tape, v, p, &vars)?;
        Ok(tape.value(logits).clone())
    }

    /// Checkpoint bytes: magic, length-prefixed canonical JSON header, every
    /// tensor in declared order as `TNSR0001`, then a CRC-32 of everything
    /// between the magic and the checksum.
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader { config: self.config.clone(), tensors: self.checkpoint_names() };
        let blob = to_canonical_string(&header)?;
        let mut payload = Vec::new();
        payload.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        payload.extend_from_slice(blob.as_bytes());
        for t in self.checkpoint_tensors() {
            t.write_to(&mut payload)?;
        }
        let mut out = Vec::with_capacity(payload.len() + 12);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let payload = &bytes[8..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut cur = Cursor::new(payload);
        let len = read_u32(&mut cur)? as usize;
        let mut blob = vec![0u8; len];
        cur.read_exact(&mut blob)?;
        let header: CheckpointHeader = serde_json::from_slice(&blob)?;
        let mut model = LevelOneParams::init(header.config)?;
        if header.tensors != model.checkpoint_names() {
            return Err(Error::Format("checkpoint tensor list does not match its config".into()));
        }
        let mut loaded = Vec::with_capacity(header.tensors.len());
        for _ in &header.tensors {
            loaded.push(Tensor::read_from(&mut cur)?);
        }
        if (cur.position() as usize) != payload.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        let mut it = loaded.into_iter();
        for t in model.tensors.iter_mut() {
            let src = it.next().expect("count checked");
            if src.shape() != t.shape() {
                return Err(Error::Format("checkpoint tensor shape mismatch".into()));
            }
            t.data_mut().copy_from_slice(src.data());
        }
        for s in model.stats.iter_mut() {
            s.mean = it.next().expect("count checked").into_data();
            s.var = it.next().expect("count checked").into_data();
        }
        let mean = it.next().expect("count checked").into_data();
        let std = it.next().expect("count checked").into_data();
        model.set_proprio_normalization(mean, std).map_err(|e| Error::Format(e.to_string()))?;
        Ok(model)
    }

    fn checkpoint_names(&self) -> Vec<String> {
        let mut names = self.names.clone();
        for (i, _) in self.stats.iter().enumerate() {
            names.push(format!("bn{i}.running_mean"));
            names.push(format!("bn{i}.running_var"));
        }
        names.push("proprio.mean".into());
        names.push("proprio.std".into());
        names
    }

    fn checkpoint_tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> =
            self.tensors.iter().map(|t| Tensor::new(t.shape(), t.data().to_vec()).expect("valid")).collect();
        for s in &self.stats {
            out.push(Tensor::new(&[s.mean.len()], s.mean.clone()).expect("valid"));
            out.push(Tensor::new(&[s.var.len()], s.var.clone()).expect("valid"));
        }
        out.push(Tensor::new(&[self.proprio_mean.len()], self.proprio_mean.clone()).expect("valid"));
        out.push(Tensor::new(&[self.proprio_std.len()], self.proprio_std.clone()).expect("valid"));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_checkpoint_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// Bitwise equality of all parameters and state.
    pub fn same_weights(&self, other: &LevelOneParams) -> bool {
        self.config == other.config
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
            && self.stats == other.stats
            && self.proprio_mean == other.proprio_mean
            && self.proprio_std == other.proprio_std
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: LevelOneConfig,
    tensors: Vec<String>,
}

/// Stacks samples into `(images N x 3 x H x W, proprio N x D, labels)`.
pub fn batch_tensors(samples: &[&Sample], image_size: (usize, usize), proprio_dim: usize) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Size("empty batch".into()));
    }
    let image_len = 3 * image_size.0 * image_size.1;
    let mut images = Vec::with_capacity(n * image_len);
    let mut proprio = Vec::with_capacity(n * proprio_dim);
    let mut labels = Vec::with_capacity(n);
    for s in samples {
        if s.image.len() != image_len || s.proprio.len() != proprio_dim {
            return Err(Error::Dimension(format!("sample {} does not match the batch layout", s.sample_id)));
        }
        images.extend_from_slice(&s.image);
        proprio.extend_from_slice(&s.proprio);
        labels.push(s.label.index());
    }
    Ok((
        Tensor::new(&[n, 3, image_size.0, image_size.1], images)?,
        Tensor::new(&[n, proprio_dim], proprio)?,
        labels,
    ))
}
