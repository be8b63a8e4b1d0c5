//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state dimension must be at least 1")]
    InvalidDimension,

    #[error("state or input contains a non-finite value")]
    NonFiniteState,

    #[error("term index {index} out of range (basis has {count} terms)")]
    TermIndexOutOfRange { index: usize, count: usize },

    #[error("time grid must be finite, strictly increasing, with at least two points")]
    InvalidGrid,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("coefficient tie constraints form a cycle or share a target")]
    InvalidTies,

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("step size underflow at t = {t}; the problem appears stiff")]
    StepUnderflow { t: f64 },

    #[error("internal step budget exhausted at t = {t}")]
    StepBudget { t: f64 },

    #[error("training diverged: every batch piece failed for {batches} consecutive batches")]
    TrainingDiverged { batches: usize, loss_history: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Integration failures are recoverable signals to the training loop;
    /// everything else aborts the run.
    pub fn is_integration_failure(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::StepUnderflow { .. } | Error::StepBudget { .. }
        )
    }
}
