//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward rule. Nodes only reference earlier nodes, so the
//! tape is topologically ordered by construction and [`Tape::backward`] is a
//! single reverse sweep.
//!
//! ```
//! use l1sa::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::new(&[1, 2], vec![1.0, 1.0]).unwrap());
//! let w = tape.param(&Tensor::new(&[1, 2], vec![2.0, 3.0]).unwrap());
//! let b = tape.param(&Tensor::new(&[1], vec![1.0]).unwrap());
//! let y = tape.linear(x, w, b).unwrap();
//! assert_eq!(tape.value(y).data(), &[6.0]);
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0]);
//! ```

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm, im2col, nop_to_onp, onp_to_nop, softmax_rows, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Per-channel running statistics of a batch-normalisation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels], momentum: 0.1, eps: 1e-5 }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom, cols: Vec<f32> },
    Linear { input: Var, weight: Var, bias: Var },
    Relu { input: Var },
    Add { a: Var, b: Var },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<f32>, inv_std: Vec<f32>, train: bool },
    GlobalAvgPool { input: Var },
    Concat { a: Var, b: Var },
    Reshape { input: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<f32>, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, requires_grad: bool, op: Op) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node { value, requires_grad, op });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; gradients are kept for it when `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad;
        self.push(tensor, rg, Op::Leaf)
    }

    /// Records a copy of a learnable tensor as a gradient-tracking leaf.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let t = Tensor::new(tensor.shape(), tensor.data().to_vec()).expect("tensor already valid");
        self.push(t, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf after one or more backward passes.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.leaf_grads[v.0].as_deref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Dimension(format!("conv2d expects NCHW input and OCkk weight, got {xs:?} and {ws:?}")));
        }
        if xs[1] != ws[1] {
            return Err(Error::Dimension(format!(
                "conv2d channel axis: input C={} but weight C={}",
                xs[1], ws[1]
            )));
        }
        if ws[2] != ws[3] {
            return Err(Error::Dimension(format!("conv2d kernel axes must be square, got {}x{}", ws[2], ws[3])));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(Error::Dimension(format!("conv2d bias axis: expected [{}], got {:?}", ws[0], self.shape(bias))));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be >= 1".into()));
        }
        let k = ws[2];
        if xs[2] + 2 * padding < k || xs[3] + 2 * padding < k {
            return Err(Error::Dimension(format!(
                "conv2d spatial axes {}x{} (padding {padding}) smaller than kernel {k}",
                xs[2], xs[3]
            )));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            k,
            stride,
            pad: padding,
            oh: (xs[2] + 2 * padding - k) / stride + 1,
            ow: (xs[3] + 2 * padding - k) / stride + 1,
        };
        let cols = im2col(self.value(input).data(), &geom);
        let mut tmp = vec![0.0f32; geom.o * geom.cols_width()];
        gemm(false, false, geom.o, geom.cols_width(), geom.patch_len(), self.value(weight).data(), &cols, 0.0, &mut tmp);
        let mut out = onp_to_nop(&tmp, geom.n, geom.o, geom.out_plane());
        let b = self.value(bias).data();
        let plane = geom.out_plane();
        for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
            let bo = b[i % geom.o];
            chunk.iter_mut().for_each(|v| *v += bo);
        }
        let value = Tensor::new(&[geom.n, geom.o, geom.oh, geom.ow], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let cols = if self.rg(weight) { cols } else { Vec::new() };
        Ok(self.push(value, rg, Op::Conv2d { input, weight, bias, geom, cols }))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::Dimension(format!("linear inner dimensions: input {xs:?} vs weight {ws:?}")));
        }
        if self.shape(bias) != [ws[0]] {
            return Err(Error::Dimension(format!("linear bias: expected [{}], got {:?}", ws[0], self.shape(bias))));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let mut out = vec![0.0f32; n * o];
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(self.value(bias).data());
        }
        gemm(false, true, n, o, i, self.value(input).data(), self.value(weight).data(), 1.0, &mut out);
        let value = Tensor::new(&[n, o], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, rg, Op::Linear { input, weight, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
        let value = Tensor::new(x.shape(), data).expect("same shape");
        let rg = self.rg(input);
        self.push(value, rg, Op::Relu { input })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    /// Per-channel normalisation over (N, H, W). Train mode uses batch
    /// statistics and updates `stats`; eval mode reads `stats`.
    pub fn batchnorm2d(&mut self, input: Var, gamma: Var, beta: Var, stats: &mut RunningStats, mode: Mode) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::Dimension(format!("batchnorm2d expects NCHW, got {xs:?}")));
        }
        let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.mean.len() != c {
            return Err(Error::Dimension(format!("batchnorm2d channel axis: input C={c}")));
        }
        let count = n * plane;
        let train = mode == Mode::Train;
        if train && count < 2 {
            return Err(Error::DegenerateBatch(format!(
                "train-mode batchnorm needs N*H*W >= 2, got {count}"
            )));
        }
        let x = self.value(input).data();
        let mut mean = vec![0.0f32; c];
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            if train {
                let mut s = 0.0f64;
                let mut s2 = 0.0f64;
                for ni in 0..n {
                    for &v in &x[(ni * c + ch) * plane..(ni * c + ch + 1) * plane] {
                        s += v as f64;
                        s2 += (v as f64) * (v as f64);
                    }
                }
                let m = s / count as f64;
                let var = (s2 / count as f64 - m * m).max(0.0);
                mean[ch] = m as f32;
                inv_std[ch] = (1.0 / (var + stats.eps as f64).sqrt()) as f32;
                let unbiased = var * count as f64 / (count - 1) as f64;
                let mom = stats.momentum;
                stats.mean[ch] = (1.0 - mom) * stats.mean[ch] + mom * m as f32;
                stats.var[ch] = (1.0 - mom) * stats.var[ch] + mom * unbiased as f32;
            } else {
                mean[ch] = stats.mean[ch];
                inv_std[ch] = (1.0 / (stats.var[ch] as f64 + stats.eps as f64).sqrt()) as f32;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0f32; x.len()];
        let mut out = vec![0.0f32; x.len()];
        for ni in 0..n {
            for ch in 0..c {
                let r = (ni * c + ch) * plane..(ni * c + ch + 1) * plane;
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x[r]) {
                    *xh = (v - mean[ch]) * inv_std[ch];
                    *o = g[ch] * *xh + b[ch];
                }
            }
        }
        let value = Tensor::new(&xs, out)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(value, rg, Op::BatchNorm { input, gamma, beta, xhat, inv_std, train }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::Dimension(format!("global_avg_pool expects NCHW, got {xs:?}")));
        }
        let plane = xs[2] * xs[3];
        let out = self
            .value(input)
            .data()
            .chunks_exact(plane)
            .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let value = Tensor::new(&[xs[0], xs[1]], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, rg, Op::GlobalAvgPool { input }))
    }

    /// Feature-axis concatenation of two `N x _` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::Dimension(format!("concat leading axis: {sa:?} vs {sb:?}")));
        }
        let (n, wa, wb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(n * (wa + wb));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..n {
            out.extend_from_slice(&da[i * wa..(i + 1) * wa]);
            out.extend_from_slice(&db[i * wb..(i + 1) * wb]);
        }
        let value = Tensor::new(&[n, wa + wb], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Concat { a, b }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.value(input).data().to_vec())?;
        let rg = self.rg(input);
        Ok(self.push(value, rg, Op::Reshape { input }))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension(format!("cross-entropy: logits {s:?} vs {} labels", labels.len())));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Label { label: bad, classes: k });
        }
        let x = self.value(logits).data();
        let mut total = 0.0f64;
        for (row, &label) in x.chunks_exact(k).zip(labels) {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            total += lse - row[label] as f64;
        }
        let mean = total / labels.len() as f64;
        let loss = if mean < 0.0 { 0.0 } else { mean as f32 };
        let probs = softmax_rows(x, k);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), rg, Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() }))
    }

    /// Backpropagates from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Rank(self.shape(loss).to_vec()));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Backpropagates an arbitrary upstream gradient `seed` from `root`.
    /// Leaf gradients accumulate across calls.
    pub fn backward_from(&mut self, root: Var, seed: &[f32]) -> Result<()> {
        if seed.len() != self.value(root).numel() {
            return Err(Error::Dimension(format!(
                "seed of length {} for node with {} elements",
                seed.len(),
                self.value(root).numel()
            )));
        }
        let Tape { nodes, leaf_grads } = self;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed.to_vec());
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let rg = |v: Var| nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => accumulate(&mut leaf_grads[idx], g),
                Op::Conv2d { input, weight, bias, geom, cols } => {
                    let (n, o, p) = (geom.n, geom.o, geom.out_plane());
                    let gt = nop_to_onp(&g, n, o, p);
                    if rg(*bias) {
                        let db = gt.chunks_exact(n * p).map(|r| r.iter().sum()).collect();
                        add_into(&mut grads, *bias, db);
                    }
                    if rg(*weight) {
                        let mut dw = vec![0.0f32; o * geom.patch_len()];
                        gemm(false, true, o, geom.patch_len(), geom.cols_width(), &gt, cols, 0.0, &mut dw);
                        add_into(&mut grads, *weight, dw);
                    }
                    if rg(*input) {
                        let mut dcols = vec![0.0f32; geom.patch_len() * geom.cols_width()];
                        let w = nodes[weight.0].value.data();
                        gemm(true, false, geom.patch_len(), geom.cols_width(), o, w, &gt, 0.0, &mut dcols);
                        let mut dx = vec![0.0f32; n * geom.c * geom.h * geom.w];
                        col2im(&dcols, geom, &mut dx);
                        add_into(&mut grads, *input, dx);
                    }
                }
                Op::Linear { input, weight, bias } => {
                    let xs = nodes[input.0].value.shape();
                    let (n, i) = (xs[0], xs[1]);
                    let o = nodes[weight.0].value.shape()[0];
                    if rg(*bias) {
                        let mut db = vec![0.0f32; o];
                        for row in g.chunks_exact(o) {
                            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        add_into(&mut grads, *bias, db);
                    }
                    if rg(*weight) {
                        let mut dw = vec![0.0f32; o * i];
                        gemm(true, false, o, i, n, &g, nodes[input.0].value.data(), 0.0, &mut dw);
                        add_into(&mut grads, *weight, dw);
                    }
                    if rg(*input) {
                        let mut dx = vec![0.0f32; n * i];
                        gemm(false, false, n, i, o, &g, nodes[weight.0].value.data(), 0.0, &mut dx);
                        add_into(&mut grads, *input, dx);
                    }
                }
                Op::Relu { input } => {
                    let y = node.value.data();
                    let dx = g.iter().zip(y).map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 }).collect();
                    add_into(&mut grads, *input, dx);
                }
                Op::Add { a, b } => {
                    if rg(*a) {
                        add_into(&mut grads, *a, g.clone());
                    }
                    if rg(*b) {
                        add_into(&mut grads, *b, g);
                    }
                }
                Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                    let s = node.value.shape();
                    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                    let gam = nodes[gamma.0].value.data();
                    let mut dgamma = vec![0.0f64; c];
                    let mut dbeta = vec![0.0f64; c];
                    for ni in 0..n {
                        for ch in 0..c {
                            let r = (ni * c + ch) * plane..(ni * c + ch + 1) * plane;
                            for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                                dgamma[ch] += (gv * xh) as f64;
                                dbeta[ch] += gv as f64;
                            }
                        }
                    }
                    if rg(*input) {
                        let mut dx = vec![0.0f32; g.len()];
                        let m = (n * plane) as f64;
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch];
                            // Batch statistics couple every element of the channel.
                            let (mean_dy, mean_dy_xhat) = if *train {
                                ((dbeta[ch] / m) as f32, (dgamma[ch] / m) as f32)
                            } else {
                                (0.0, 0.0)
                            };
                            for ni in 0..n {
                                let r = (ni * c + ch) * plane..(ni * c + ch + 1) * plane;
                                for ((d, &gv), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                    *d = scale * (gv - mean_dy - xh * mean_dy_xhat);
                                }
                            }
                        }
                        add_into(&mut grads, *input, dx);
                    }
                    if rg(*gamma) {
                        add_into(&mut grads, *gamma, dgamma.iter().map(|&v| v as f32).collect());
                    }
                    if rg(*beta) {
                        add_into(&mut grads, *beta, dbeta.iter().map(|&v| v as f32).collect());
                    }
                }
                Op::GlobalAvgPool { input } => {
                    let s = nodes[input.0].value.shape();
                    let plane = s[2] * s[3];
                    let inv = 1.0 / plane as f32;
                    let mut dx = vec![0.0f32; s.iter().product()];
                    for (chunk, &gv) in dx.chunks_exact_mut(plane).zip(&g) {
                        chunk.fill(gv * inv);
                    }
                    add_into(&mut grads, *input, dx);
                }
                Op::Concat { a, b } => {
                    let wa = nodes[a.0].value.shape()[1];
                    let wb = nodes[b.0].value.shape()[1];
                    let mut da = Vec::with_capacity(g.len() / (wa + wb) * wa);
                    let mut db = Vec::with_capacity(g.len() / (wa + wb) * wb);
                    for row in g.chunks_exact(wa + wb) {
                        da.extend_from_slice(&row[..wa]);
                        db.extend_from_slice(&row[wa..]);
                    }
                    if rg(*a) {
                        add_into(&mut grads, *a, da);
                    }
                    if rg(*b) {
                        add_into(&mut grads, *b, db);
                    }
                }
                Op::Reshape { input } => add_into(&mut grads, *input, g),
                Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                    let k = nodes[logits.0].value.shape()[1];
                    let scale = g[0] / labels.len() as f32;
                    let mut dx = probs.clone();
                    for (row, &label) in dx.chunks_exact_mut(k).zip(labels) {
                        row[label] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= scale);
                    }
                    add_into(&mut grads, *logits, dx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

fn add_into(grads: &mut [Option<Vec<f32>>], v: Var, g: Vec<f32>) {
    accumulate(&mut grads[v.0], g);
}
