//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-contiguous cache write at layer {layer}: got position {position}, expected {expected}")]
    CacheNonContiguous {
        layer: usize,
        position: usize,
        expected: usize,
    },

    #[error("missing cache entry at layer {layer}, position {position}")]
    CacheMissing { layer: usize, position: usize },

    #[error("token id {0} out of range for vocab of {1}")]
    TokenOutOfRange(i64, usize),

    #[error("virtual layer {0} out of range ({1} total)")]
    LayerOutOfRange(usize, usize),

    #[error("model/config mismatch: {0}")]
    ModelMismatch(String),

    #[error("pipeline state corrupt: {0}")]
    StateCorrupt(String),

    #[error("invalid script: {0}")]
    InvalidScript(String),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid cost-model input: {0}")]
    InvalidCostInput(String),

    #[error("{0}: {1}")]
    File(String, std::io::Error),

    #[error("malformed {kind} file {path}: {detail}")]
    Format {
        kind: &'static str,
        path: String,
        detail: String,
    },
}
