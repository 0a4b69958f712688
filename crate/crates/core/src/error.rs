use thiserror::Error;

/// Errors produced by mesh generation, H-matrix construction, precision
/// preparation, multiplication and the experiment harness.
#[derive(Debug, Error)]
pub enum HmxError {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("size {requested} exceeds the configured cap of {cap}")]
    Size { requested: usize, cap: usize },

    #[error("coincident centroids for panels {i} and {j}")]
    Singularity { i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("value {value:e} in block {block} overflows FP32")]
    Fp32Overflow { block: usize, value: f64 },

    #[error("non-finite result produced by block {block}")]
    NonFinite { block: usize },

    #[error("matrix is numerically singular (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown precision scheme `{0}`")]
    UnknownScheme(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HmxError> = std::result::Result<T, E>;
