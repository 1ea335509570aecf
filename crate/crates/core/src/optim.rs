use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    pub momentum: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 0.001,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter auxiliary buffers.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState { config, step_count: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn sgd(learning_rate: f32) -> Self {
        Self::new(OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate, ..Default::default() })
    }

    pub fn adam(learning_rate: f32) -> Self {
        Self::new(OptimizerConfig { learning_rate, ..Default::default() })
    }

    /// Applies one update to every tensor in `params` from its stored gradient.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
            return Err(Error::Optimizer(format!("parameter #{i} has no gradient")));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            if self.config.kind == OptimizerKind::Adam {
                self.second = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            }
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(&params).any(|(b, p)| b.len() != p.numel())
        {
            return Err(Error::Optimizer("parameter set changed between steps".into()));
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - (c.beta1 as f64).powi(t);
        let bc2 = 1.0 - (c.beta2 as f64).powi(t);
        for (i, p) in params.into_iter().enumerate() {
            let grad = p.grad.take().expect("checked above");
            let data = p.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in data.iter_mut().zip(&grad) {
                        *w -= c.learning_rate * (g + c.weight_decay * *w);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for ((w, &g), v) in data.iter_mut().zip(&grad).zip(&mut self.first[i]) {
                        *v = c.momentum * *v + g + c.weight_decay * *w;
                        *w -= c.learning_rate * *v;
                    }
                }
                OptimizerKind::Adam => {
                    for (((w, &g), m), v) in
                        data.iter_mut().zip(&grad).zip(&mut self.first[i]).zip(&mut self.second[i])
                    {
                        let g = g + c.weight_decay * *w;
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let m_hat = *m as f64 / bc1;
                        let v_hat = *v as f64 / bc2;
                        *w -= (c.learning_rate as f64 * m_hat / (v_hat.sqrt() + c.eps as f64)) as f32;
                    }
                }
            }
            p.grad = Some(grad);
        }
        Ok(())
    }
}
