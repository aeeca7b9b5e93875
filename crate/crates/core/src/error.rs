use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LccError>;

#[derive(Debug, Error)]
pub enum LccError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("requested {requested} samples but only {available} are available")]
    InsufficientData { requested: usize, available: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("encoding failed for {} point(s); first at index {}: {}", .failures.len(), .failures[0].0, .failures[0].1)]
    BatchFailure { failures: Vec<(usize, String)> },

    #[error("linear system is not positive definite")]
    NotPositiveDefinite,

    #[error("neighbourhood of center {center} spans only {rank} of the {m} requested tangent directions")]
    RankDeficient { center: usize, rank: usize, m: usize },

    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },

    #[error("image file holds {images} items but label file holds {labels}")]
    LengthMismatch { images: usize, labels: usize },

    #[error("image {0} is all zero and cannot be normalised")]
    ZeroImage(usize),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
