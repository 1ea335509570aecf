//! Training loop, stratified splitting and confusion-matrix evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{batch_tensors, LevelOneParams, Prediction};
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::synth::{rng_for, Dataset, Label, Sample, SceneKind};
use crate::tape::{Mode, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub optimizer: OptimizerKind,
    pub momentum: f32,
    pub weight_decay: f32,
    pub split_fraction: f64,
    pub shuffle_seed: u64,
    pub deterministic: bool,
    /// Stop after this many epochs without a new best validation accuracy.
    pub early_stop_patience: Option<usize>,
    /// Standard deviation of Gaussian pixel noise added to training images.
    pub augment_pixel_noise: f32,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 24,
            batch_size: 64,
            learning_rate: 0.001,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            weight_decay: 0.0,
            split_fraction: 0.8,
            shuffle_seed: 0,
            deterministic: true,
            early_stop_patience: None,
            augment_pixel_noise: 0.0,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("epochs and batch sizes must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!("split_fraction {} not in (0, 1)", self.split_fraction)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.augment_pixel_noise >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("augment_pixel_noise and weight_decay must be non-negative".into()));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::Config("early_stop_patience must be at least 1".into()));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub train_samples: usize,
    pub val_samples: usize,
    pub steps: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub parameters_unchanged: bool,
    pub checkpoint: Option<String>,
    pub wall_clock_seconds: Option<f64>,
}

/// 2x2 counts indexed `[true][predicted]` with environment = 0, self = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_pairs<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> Self {
        let mut m = ConfusionMatrix::default();
        for (t, p) in pairs {
            m.counts[t.index()][p.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn true_count(&self, label: Label) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    /// Fraction of samples of `label` predicted as `label`; `None` when the
    /// class is absent.
    pub fn class_rate(&self, label: Label) -> Option<f64> {
        let i = label.index();
        match self.true_count(label) {
            0 => None,
            n => Some(self.counts[i][i] as f64 / n as f64),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true,predicted,count\n");
        for t in [Label::Environment, Label::SelfBody] {
            for p in [Label::Environment, Label::SelfBody] {
                out.push_str(&format!("{},{},{}\n", t.name(), p.name(), self.counts[t.index()][p.index()]));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("true,predicted,count") {
            return Err(Error::Format("confusion CSV header must be true,predicted,count".into()));
        }
        let parse_label = |s: &str| {
            [Label::Environment, Label::SelfBody]
                .into_iter()
                .find(|l| l.name() == s)
                .ok_or_else(|| Error::Format(format!("unknown label {s:?}")))
        };
        let mut m = ConfusionMatrix::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 3 {
                return Err(Error::Format(format!("bad confusion row {line:?}")));
            }
            let count: u64 = f[2].parse().map_err(|_| Error::Format(format!("bad count {:?}", f[2])))?;
            m.counts[parse_label(f[0])?.index()][parse_label(f[1])?.index()] = count;
        }
        Ok(m)
    }
}

/// Eval-mode predictions for every sample, in dataset order.
pub fn predict_dataset(model: &LevelOneParams, data: &Dataset, batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, proprio, _) = batch_tensors(&refs, data.image_size, data.proprio_dim)?;
        out.extend(model.predict(&images, &proprio)?);
    }
    Ok(out)
}

pub fn evaluate(model: &LevelOneParams, data: &Dataset) -> Result<ConfusionMatrix> {
    evaluate_batched(model, data, 256)
}

pub fn evaluate_batched(model: &LevelOneParams, data: &Dataset, batch_size: usize) -> Result<ConfusionMatrix> {
    if data.is_empty() {
        return Err(Error::Size("cannot evaluate an empty dataset".into()));
    }
    let preds = predict_dataset(model, data, batch_size)?;
    Ok(ConfusionMatrix::from_pairs(data.samples.iter().zip(&preds).map(|(s, p)| (s.label, p.label))))
}

/// Splits each `(scene kind, label)` stratum into `round(fraction * n)`
/// training samples and the rest for validation. Both halves keep the
/// original sample order.
pub fn split_train_val(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} not in (0, 1)")));
    }
    if data.len() < 5 {
        return Err(Error::Size(format!("need at least 5 samples to split, got {}", data.len())));
    }
    let mut strata: BTreeMap<(SceneKind, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in data.samples.iter().enumerate() {
        strata.entry((s.scene_kind, s.label.index())).or_default().push(i);
    }
    let kinds: Vec<SceneKind> = {
        let mut k: Vec<SceneKind> = strata.keys().map(|k| k.0).collect();
        k.dedup();
        k
    };
    for kind in &kinds {
        for label in [Label::Environment, Label::SelfBody] {
            if !strata.contains_key(&(*kind, label.index())) {
                return Err(Error::Stratification(format!(
                    "scene {} has no {} samples",
                    kind.name(),
                    label.name()
                )));
            }
        }
    }
    let mut in_train = vec![false; data.len()];
    for ((kind, label), mut idx) in strata {
        let mut rng = rng_for(seed, ((kind.index() as u64) << 8) | label as u64);
        idx.shuffle(&mut rng);
        let take = (fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..take] {
            in_train[i] = true;
        }
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (s, t) in data.samples.iter().zip(in_train) {
        if t { train.push(s.clone()) } else { val.push(s.clone()) }
    }
    Ok((data.with_samples(train), data.with_samples(val)))
}

fn check_layout(model: &LevelOneParams, data: &Dataset) -> Result<()> {
    if data.image_size != model.config.image_size || data.proprio_dim != model.config.proprio_input_dim {
        return Err(Error::Dimension(format!(
            "dataset ({:?}, proprio {}) does not match model ({:?}, proprio {})",
            data.image_size, data.proprio_dim, model.config.image_size, model.config.proprio_input_dim
        )));
    }
    Ok(())
}

/// Trains `model` in place and leaves it holding the weights of the epoch
/// with the best validation accuracy (earliest on ties). Proprioception
/// standardisation is fitted on the training set first.
pub fn train(model: &mut LevelOneParams, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Size("training set is empty".into()));
    }
    check_layout(model, train_set)?;
    if !val_set.is_empty() {
        check_layout(model, val_set)?;
    }
    let started = Instant::now();
    let (mean, std) = train_set.proprio_stats();
    model.set_proprio_normalization(mean, std)?;
    let initial: Vec<Vec<f32>> = model.tensors().iter().map(|t| t.data().to_vec()).collect();

    let mut opt = OptimizerState::new(config.optimizer_config());
    let noise = Normal::new(0.0f32, config.augment_pixel_noise.max(f32::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, LevelOneParams)> = None;
    let mut since_best = 0usize;
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        let mut rng = rng_for(config.shuffle_seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train_set.samples[i]).collect();
            let (mut images, proprio, labels) = batch_tensors(&refs, train_set.image_size, train_set.proprio_dim)?;
            if config.augment_pixel_noise > 0.0 {
                for v in images.data_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            let mut tape = Tape::new();
            let trace = model.trace(&mut tape, images, &proprio, Mode::Train)?;
            let loss = tape.softmax_cross_entropy(trace.logits, &labels)?;
            let value = tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Divergence { step: step as usize, loss: value });
            }
            tape.backward(loss)?;
            model.zero_grad();
            model.accumulate_grads(&tape, &trace);
            opt.step(model.tensors_mut().iter_mut())?;
            loss_sum += value * chunk.len() as f64;
            step += 1;
        }
        let val_accuracy = if val_set.is_empty() {
            0.0
        } else {
            evaluate_batched(model, val_set, config.eval_batch_size)?.accuracy()
        };
        epochs.push(EpochRecord { epoch, train_loss: loss_sum / train_set.len() as f64, val_accuracy });
        let improved = best.as_ref().is_none_or(|b| val_accuracy > b.1 || val_set.is_empty());
        if improved {
            best = Some((epoch, val_accuracy, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (best_epoch, best_val_accuracy, snapshot) = best.expect("at least one epoch");
    *model = snapshot;
    for t in model.tensors_mut() {
        t.grad = None;
    }
    let parameters_unchanged = model
        .tensors()
        .iter()
        .zip(&initial)
        .all(|(t, init)| t.data().iter().zip(init).all(|(a, b)| a.to_bits() == b.to_bits()));
    Ok(TrainReport {
        config: config.clone(),
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        steps: step,
        epochs,
        best_epoch,
        best_val_accuracy,
        parameters_unchanged,
        checkpoint: None,
        wall_clock_seconds: (!config.deterministic).then(|| started.elapsed().as_secs_f64()),
    })
}
