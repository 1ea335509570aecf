use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("rank error: expected a scalar, got shape {0:?}")]
    Rank(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("optimizer error: {0}")]
    Optimizer(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("degenerate range: {0}")]
    DegenerateRange(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad inputs or configuration rather than by a failure
    /// while the work itself was running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Rank(_)
                | Error::Label { .. }
                | Error::Config(_)
                | Error::Size(_)
                | Error::Pairing(_)
                | Error::Stratification(_)
                | Error::Comparison(_)
                | Error::Missing(_)
        )
    }
}
