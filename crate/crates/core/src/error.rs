//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VpgError>;

#[derive(Debug, Error)]
pub enum VpgError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding contains a non-finite value at position {position}")]
    NonFiniteValue { position: usize },

    #[error("unknown entity: {0}")]
    UnknownEntity(String),

    #[error("duplicate key: {0}")]
    DuplicateKey(String),

    #[error("store error: {0}")]
    Store(String),

    #[error("feature extraction failed: {0}")]
    Extraction(String),

    #[error("insufficient calibration data: need at least {required} queries, got {got}")]
    InsufficientCalibrationData { required: usize, got: usize },

    #[error("labeling failed: {0}")]
    Labeling(String),

    #[error("insufficient hard triplets: need {needed}, have {available}")]
    InsufficientTriplets { needed: usize, available: usize },

    #[error("nothing to evaluate")]
    EmptyEvaluation,

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed record at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("coalesced computation failed: {0}")]
    Coalesced(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl VpgError {
    /// Partial-progress wrapper for bulk writes: how many entries landed
    /// before the failure.
    pub fn backfill_interrupted(written: u64, cause: VpgError) -> VpgError {
        VpgError::Store(format!(
            "backfill interrupted after {written} entries: {cause}"
        ))
    }
}
