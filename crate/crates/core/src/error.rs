//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("beam index {index} out of range for {num_beams} beams")]
    BeamIndex { index: usize, num_beams: usize },

    #[error("{path}:{line}:{column}: parse error: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}:{line}: expected {expected} ranges, found {found}")]
    BeamCountMismatch {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch in layer {layer}: expected {expected}, got {actual}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        actual: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("could not place scene objects after {0} retries")]
    ScenePlacement(usize),

    #[error("evaluation set contains no annotations; recall is undefined")]
    NoAnnotations,

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
