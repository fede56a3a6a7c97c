use std::io;

use thiserror::Error;

pub type Result<T, E = HainError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HainError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A precondition of an operation was violated by the caller.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse { row: usize, column: usize, reason: String },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("incompatible format: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HainError {
    pub(crate) fn shape(what: impl Into<String>) -> Self {
        HainError::Shape(what.into())
    }

    pub(crate) fn contract(what: impl Into<String>) -> Self {
        HainError::Contract(what.into())
    }
}
