use thiserror::Error;

/// Errors produced by the library.
///
/// Structural problems (shape mismatches, unreadable input) are errors;
/// model-condition violations discovered by [`crate::model::ModelParams::validate`]
/// are reported as data, not errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("degenerate loading matrix: {0}")]
    DegenerateLoading(String),

    #[error("variance settings violate the ordering/separation conditions: {0}")]
    VarianceConditions(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("dense-path size cap exceeded: pq = {pq} > {cap}")]
    DenseCapExceeded { pq: usize, cap: usize },

    #[error("true loading column {0} is constant; R^2 is undefined")]
    ConstantColumn(usize),

    #[error("matrix must be symmetric for {0}")]
    NotSymmetric(&'static str),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("data matrix is too degenerate to initialize: {0}")]
    DegenerateData(String),

    #[error("eigen/SVD computation failed: {0}")]
    DecompositionFailed(String),

    #[error("csv error at row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
