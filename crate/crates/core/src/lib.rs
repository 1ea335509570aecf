//! Self/environment differentiation for a simulated dual-arm robot from
//! fused vision and proprioception.

pub mod config;
pub mod error;
pub mod experiment;
pub mod json;
pub mod model;
mod kernels;
pub mod interpret;
pub mod optim;
pub mod pnm;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use kernels::softmax_rows;
pub use model::{LayerId, LevelOneConfig, LevelOneParams, Prediction};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use tape::{Mode, RunningStats, Tape, Var};
pub use tensor::Tensor;
