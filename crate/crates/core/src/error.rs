use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CocaError>;

#[derive(Debug, Error)]
pub enum CocaError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid configuration keys: {}", .0.join(", "))]
    InvalidKeys(Vec<String>),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CocaError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        CocaError::Validation(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        CocaError::Format { what, reason: reason.into() }
    }
}
