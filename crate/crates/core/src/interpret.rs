//! Gradient saliency over input images and mutual information between
//! trained weight vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{predict_from_logits, LayerId, LevelOneConfig, LevelOneParams};
use crate::pnm::encode_pgm;
use crate::synth::{Dataset, Label};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A model whose logits can be differentiated with respect to its image input.
pub trait Attributable {
    /// `(height, width)` of the expected image.
    fn image_size(&self) -> (usize, usize);

    /// Records an eval-mode forward pass for one sample and returns the
    /// image leaf and the `1 x 2` logits.
    fn trace_logits(&self, tape: &mut Tape, image: Tensor, proprio: Tensor) -> Result<(Var, Var)>;
}

impl Attributable for LevelOneParams {
    fn image_size(&self) -> (usize, usize) {
        self.config.image_size
    }

    fn trace_logits(&self, tape: &mut Tape, image: Tensor, proprio: Tensor) -> Result<(Var, Var)> {
        let tr = self.trace_eval(tape, image, &proprio)?;
        Ok((tr.image, tr.logits))
    }
}

/// Flattens the image and applies one linear layer; proprioception is ignored.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub image_size: (usize, usize),
    /// `2 x (3 * H * W)`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Attributable for LinearProbe {
    fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    fn trace_logits(&self, tape: &mut Tape, image: Tensor, _proprio: Tensor) -> Result<(Var, Var)> {
        let (h, w) = self.image_size;
        let x = tape.leaf(image);
        let flat = tape.reshape(x, &[1, 3 * h * w])?;
        let wv = tape.param(&self.weight);
        let bv = tape.param(&self.bias);
        Ok((x, tape.linear(flat, wv, bv)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major `H x W`, each in `[0, 1]`.
    pub values: Vec<f32>,
    pub predicted: Label,
    pub confidence: f32,
    pub sample_id: u64,
    pub raw_min: f32,
    pub raw_max: f32,
    /// Set when the raw gradient map is identically zero.
    pub zero_map: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencySidecar {
    pub sample_id: u64,
    pub predicted_label: Label,
    pub confidence: f32,
    pub raw_min: f32,
    pub raw_max: f32,
    pub zero_map: bool,
}

impl SaliencyMap {
    pub fn to_pgm(&self) -> Vec<u8> {
        let px: Vec<u8> = self.values.iter().map(|&v| crate::pnm::unit_to_byte(v)).collect();
        encode_pgm(self.width, self.height, &px).expect("map dimensions are consistent")
    }

    pub fn sidecar(&self) -> SaliencySidecar {
        SaliencySidecar {
            sample_id: self.sample_id,
            predicted_label: self.predicted,
            confidence: self.confidence,
            raw_min: self.raw_min,
            raw_max: self.raw_max,
            zero_map: self.zero_map,
        }
    }
}

/// Per-pixel maximum over channels of `|d logit_pred / d image|`.
pub fn raw_saliency<M: Attributable + ?Sized>(model: &M, image: &[f32], proprio: &[f32]) -> Result<(Vec<f32>, Label, f32)> {
    let (h, w) = model.image_size();
    let plane = h * w;
    let img = Tensor::new(&[1, 3, h, w], image.to_vec())?.with_grad();
    let pro = Tensor::new(&[1, proprio.len()], proprio.to_vec())?;
    let mut tape = Tape::new();
    let (x, logits) = model.trace_logits(&mut tape, img, pro)?;
    let pred = predict_from_logits(tape.value(logits).data());
    let mut seed = vec![0.0f32; tape.value(logits).numel()];
    seed[pred.label.index()] = 1.0;
    tape.backward_from(logits, &seed)?;
    let raw = match tape.grad(x) {
        Some(g) => (0..plane).map(|p| (0..3).map(|c| g[c * plane + p].abs()).fold(0.0f32, f32::max)).collect(),
        None => vec![0.0; plane],
    };
    Ok((raw, pred.label, pred.confidence))
}

pub fn saliency<M: Attributable + ?Sized>(model: &M, image: &[f32], proprio: &[f32], sample_id: u64) -> Result<SaliencyMap> {
    let (height, width) = model.image_size();
    let (raw, predicted, confidence) = raw_saliency(model, image, proprio)?;
    let raw_min = raw.iter().copied().fold(f32::INFINITY, f32::min);
    let raw_max = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let zero_map = raw_max == 0.0;
    let values = if zero_map {
        vec![0.0; raw.len()]
    } else if raw_max == raw_min {
        vec![1.0; raw.len()]
    } else {
        let span = raw_max - raw_min;
        raw.iter().map(|&v| ((v - raw_min) / span).clamp(0.0, 1.0)).collect()
    };
    Ok(SaliencyMap { height, width, values, predicted, confidence, sample_id, raw_min, raw_max, zero_map })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentReport {
    pub samples: usize,
    /// Mean fraction of normalised saliency mass inside the arm mask.
    pub mean_mass_inside: f64,
    /// Mean fraction of the image covered by the arm mask.
    pub mean_area_fraction: f64,
    /// `mean_mass_inside / mean_area_fraction`; above 1 means saliency
    /// concentrates on the arm more than a uniform map would.
    pub enrichment: f64,
}

/// Arm enrichment over up to `max_samples` self samples with a visible arm
/// and a nonzero saliency map.
pub fn arm_enrichment<M: Attributable + ?Sized>(model: &M, data: &Dataset, max_samples: usize) -> Result<EnrichmentReport> {
    let (mut mass, mut area, mut n) = (0.0f64, 0.0f64, 0usize);
    for s in data.samples.iter().filter(|s| s.label == Label::SelfBody && !s.mask.is_empty()) {
        if n == max_samples {
            break;
        }
        let map = saliency(model, &s.image, &s.proprio, s.sample_id)?;
        let total: f64 = map.values.iter().map(|&v| v as f64).sum();
        if map.zero_map || total == 0.0 {
            continue;
        }
        let w = map.width;
        let inside: f64 = map
            .values
            .iter()
            .enumerate()
            .filter(|(i, _)| s.mask.get(i / w, i % w))
            .map(|(_, &v)| v as f64)
            .sum();
        mass += inside / total;
        area += s.mask.coverage();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Size("no self samples with a visible arm and nonzero saliency".into()));
    }
    let (mean_mass_inside, mean_area_fraction) = (mass / n as f64, area / n as f64);
    Ok(EnrichmentReport { samples: n, mean_mass_inside, mean_area_fraction, enrichment: mean_mass_inside / mean_area_fraction })
}

/// Equal-width bin index of each value over the vector's own `[min, max]`;
/// the maximum falls in the last bin.
pub fn bin_indices(values: &[f32], bins: usize) -> Result<Vec<usize>> {
    if bins == 0 {
        return Err(Error::Config("bin count must be positive".into()));
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRange("weights must be nonempty and finite".into()));
    }
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if hi == lo {
        return Err(Error::DegenerateRange(format!("constant vector (value {lo})")));
    }
    let width = (hi - lo) / bins as f64;
    Ok(values.iter().map(|&v| (((v as f64 - lo) / width) as usize).min(bins - 1)).collect())
}

pub fn entropy_bits(counts: &[u64], total: u64) -> f64 {
    let n = total as f64;
    -counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        p * p.log2()
    }).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIReport {
    pub bins: usize,
    pub samples: usize,
    /// Row-major `B x B` counts; rows index the first operand's bins.
    pub joint_counts: Vec<u64>,
    pub h_a: f64,
    pub h_b: f64,
    pub mi_bits: f64,
    pub layer: Option<LayerId>,
    pub model_a: String,
    pub model_b: String,
}

impl MIReport {
    pub fn joint_probabilities(&self) -> Vec<f64> {
        let n = self.samples as f64;
        self.joint_counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn marginal_counts(&self) -> (Vec<u64>, Vec<u64>) {
        let b = self.bins;
        let rows = (0..b).map(|i| self.joint_counts[i * b..(i + 1) * b].iter().sum()).collect();
        let cols = (0..b).map(|j| (0..b).map(|i| self.joint_counts[i * b + j]).sum()).collect();
        (rows, cols)
    }
}

/// Histogram mutual information in bits, computed as `H(A) + H(B) - H(A, B)`
/// and clamped to `[0, min(H(A), H(B))]`.
pub fn mutual_information(a: &[f32], b: &[f32], bins: usize) -> Result<MIReport> {
    if a.len() != b.len() {
        return Err(Error::Comparison(format!("vectors differ in length ({} vs {})", a.len(), b.len())));
    }
    let ia = bin_indices(a, bins)?;
    let ib = bin_indices(b, bins)?;
    let mut joint = vec![0u64; bins * bins];
    let mut ca = vec![0u64; bins];
    let mut cb = vec![0u64; bins];
    for (&i, &j) in ia.iter().zip(&ib) {
        joint[i * bins + j] += 1;
        ca[i] += 1;
        cb[j] += 1;
    }
    let n = a.len() as u64;
    let h_a = entropy_bits(&ca, n);
    let h_b = entropy_bits(&cb, n);
    let h_ab = entropy_bits(&joint, n);
    let mi_bits = (h_a + h_b - h_ab).clamp(0.0, h_a.min(h_b));
    Ok(MIReport {
        bins,
        samples: a.len(),
        joint_counts: joint,
        h_a,
        h_b,
        mi_bits,
        layer: None,
        model_a: String::new(),
        model_b: String::new(),
    })
}

pub fn weight_mutual_information(a: &LevelOneParams, b: &LevelOneParams, layer: LayerId, bins: usize) -> Result<MIReport> {
    let (wa, wb) = (a.layer_weights(layer), b.layer_weights(layer));
    if wa.shape() != wb.shape() {
        return Err(Error::Comparison(format!("layer {} shapes {:?} vs {:?}", layer.name(), wa.shape(), wb.shape())));
    }
    let mut r = mutual_information(wa.data(), wb.data(), bins)?;
    r.layer = Some(layer);
    Ok(r)
}

/// Log-scaled `B x B` PGM: `255 * ln(1 + c) / ln(1 + c_max)`.
pub fn joint_histogram_render(report: &MIReport) -> Vec<u8> {
    let cmax = report.joint_counts.iter().copied().max().unwrap_or(0);
    let denom = (cmax as f64).ln_1p();
    let px: Vec<u8> = report
        .joint_counts
        .iter()
        .map(|&c| if cmax == 0 { 0 } else { (255.0 * (c as f64).ln_1p() / denom).round() as u8 })
        .collect();
    encode_pgm(report.bins, report.bins, &px).expect("square histogram")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSidecar {
    pub model_a: String,
    pub model_b: String,
    pub layer: Option<LayerId>,
    pub bins: usize,
    pub mi_bits: f64,
    pub h_a: f64,
    pub h_b: f64,
}

impl From<&MIReport> for HistogramSidecar {
    fn from(r: &MIReport) -> Self {
        HistogramSidecar {
            model_a: r.model_a.clone(),
            model_b: r.model_b.clone(),
            layer: r.layer,
            bins: r.bins,
            mi_bits: r.mi_bits,
            h_a: r.h_a,
            h_b: r.h_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMI {
    pub models: Vec<String>,
    pub layer: LayerId,
    pub bins: usize,
    /// Unordered pairs `(i, j)` with `i < j`, in lexicographic order.
    pub pairs: Vec<MIReport>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl PairwiseMI {
    /// Symmetric `n x n` matrix with `None` on the diagonal.
    pub fn matrix(&self) -> Vec<Vec<Option<f64>>> {
        let n = self.models.len();
        let mut m = vec![vec![None; n]; n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                m[i][j] = Some(self.pairs[k].mi_bits);
                m[j][i] = Some(self.pairs[k].mi_bits);
                k += 1;
            }
        }
        m
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_a,model_b,mi_bits,h_a,h_b\n");
        for p in &self.pairs {
            out.push_str(&format!("{},{},{},{},{}\n", p.model_a, p.model_b, p.mi_bits, p.h_a, p.h_b));
        }
        out
    }
}

fn seedless(c: &LevelOneConfig) -> LevelOneConfig {
    LevelOneConfig { seed: 0, ..c.clone() }
}

/// MI for every unordered pair of models at one layer.
pub fn compare_group_models(models: &[(String, &LevelOneParams)], layer: LayerId, bins: usize) -> Result<PairwiseMI> {
    if models.len() < 2 {
        return Err(Error::Comparison("need at least two models".into()));
    }
    let reference = seedless(&models[0].1.config);
    if let Some((name, _)) = models.iter().find(|(_, m)| seedless(&m.config) != reference) {
        return Err(Error::Comparison(format!("model {name} has a different architecture")));
    }
    let mut pairs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let mut r = weight_mutual_information(models[i].1, models[j].1, layer, bins)?;
            r.model_a = models[i].0.clone();
            r.model_b = models[j].0.clone();
            pairs.push(r);
        }
    }
    let vals: Vec<f64> = pairs.iter().map(|p| p.mi_bits).collect();
    Ok(PairwiseMI {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        layer,
        bins,
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
        pairs,
    })
}
