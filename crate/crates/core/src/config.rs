//! Top-level run configuration read from a JSON file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerId, LevelOneConfig};
use crate::synth::{RobotSpec, SceneKind, SceneSpec};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretConfig {
    pub bins: usize,
    pub layer: LayerId,
    pub saliency_samples: usize,
    pub enrichment_samples: usize,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig { bins: 32, layer: LayerId::Fc2, saliency_samples: 8, enrichment_samples: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub robot: RobotSpec,
    /// Per-kind scene overrides; kinds not listed use their defaults.
    pub scenes: Vec<SceneSpec>,
    pub samples_per_scene: usize,
    pub model: LevelOneConfig,
    pub train: TrainConfig,
    pub interpret: InterpretConfig,
    pub seed: u64,
    pub deterministic: bool,
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            robot: RobotSpec::default(),
            scenes: Vec::new(),
            samples_per_scene: 4000,
            model: LevelOneConfig::default(),
            train: TrainConfig::default(),
            interpret: InterpretConfig::default(),
            seed: 0,
            deterministic: true,
            verbosity: 1,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Scene specs for all four kinds, applying overrides, image size and seed.
    pub fn scene_specs(&self) -> Vec<SceneSpec> {
        SceneKind::ALL
            .iter()
            .map(|&k| {
                let mut s = self.scenes.iter().find(|s| s.scene_kind == k).cloned().unwrap_or_else(|| SceneSpec::new(k, self.model.image_size, self.seed));
                s.image_size = self.model.image_size;
                s.seed = self.seed;
                s
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        let mut seen = BTreeSet::new();
        for s in &self.scenes {
            if !seen.insert(s.scene_kind) {
                return Err(Error::Config(format!("scene {} listed twice", s.scene_kind.name())));
            }
        }
        for s in self.scene_specs() {
            s.validate()?;
        }
        self.model.validate()?;
        if self.model.proprio_input_dim != self.robot.proprio_dim() {
            return Err(Error::Config(format!(
                "model proprio_input_dim {} != robot proprio dimension {}",
                self.model.proprio_input_dim,
                self.robot.proprio_dim()
            )));
        }
        self.train.validate()?;
        if self.interpret.bins == 0 {
            return Err(Error::Config("interpret.bins must be positive".into()));
        }
        Ok(())
    }
}
