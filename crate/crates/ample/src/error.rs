//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by loading, validation, training and the experiment
/// harness. Contract violations (shape mismatches between internal tensors,
/// indexing bugs) panic instead; everything a caller can plausibly recover
/// from is an `AmpleError`.
#[derive(Debug, Error)]
pub enum AmpleError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed lexicon at line {line}: {reason}")]
    MalformedLexicon { line: usize, reason: String },

    #[error("malformed store: {reason}")]
    MalformedStore { reason: String },

    #[error("dimension mismatch for record '{id}': expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate id '{0}'")]
    DuplicateId(String),

    #[error("record '{0}' has no image vector")]
    NoImage(String),

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("insufficient data for class '{class}': need {needed}, have {available}")]
    InsufficientData {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("batch statistics require at least 2 samples in train mode, got {0}")]
    BatchStatistics(usize),

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, AmpleError>;
