use thiserror::Error;

#[derive(Debug, Error)]
pub enum GgmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("singular input: {0}")]
    Singular(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("column {column} has zero median absolute deviation")]
    ZeroMad { column: usize },

    #[error("all observation weights are zero")]
    ZeroWeights,

    #[error("weighted densities underflow in every observation")]
    DegenerateWeights,

    #[error("quadrature grid too short: estimated tail mass {tail_mass:e} exceeds {limit:e}")]
    GridTooShort { tail_mass: f64, limit: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GgmError>;
