use thiserror::Error;

use crate::ansatz::MaskedAnsatz;

pub type Result<T, E = NqsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NqsError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("non-finite log-amplitude {value} for configuration {config:?}")]
    NonFinite { value: f64, config: Vec<i8> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{what}: limit is {limit}, requested {requested}")]
    Capacity {
        what: &'static str,
        limit: usize,
        requested: usize,
    },

    #[error("conjugate gradient stopped after {iterations} iterations with residual {residual:e}")]
    CgNotConverged { iterations: usize, residual: f64 },

    /// Carries the last parameter state whose energy was finite.
    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        last_finite: Box<MaskedAnsatz>,
    },

    #[error("pruning schedule exhausted with {ones} remaining weights")]
    ScheduleExhausted { ones: usize },

    #[error("reference energy is zero; relative error undefined")]
    UndefinedReference,

    #[error("resume refused: {0}")]
    ResumeRefused(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NqsError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        NqsError::Contract(msg.into())
    }
}
