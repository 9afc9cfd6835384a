//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CfbError {
    #[error("column `{0}` not found in the input file")]
    MissingColumn(String),

    #[error("treatment column contains non-binary value `{value}` at row {row}")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("missing value at row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },

    #[error("cannot parse `{value}` at row {row}, column `{col}` as a number")]
    MalformedNumber {
        row: usize,
        col: String,
        value: String,
    },

    #[error("column `{0}` is constant and cannot be rescaled")]
    ConstantColumn(String),

    #[error("dataset is invalid: {0}")]
    InvalidDataset(String),

    #[error("kernel input {value} lies outside [0, 1]")]
    DomainError { value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("symmetric eigendecomposition did not converge")]
    EigFailure,

    #[error("all eigenvalues fell below the truncation threshold")]
    AllEigenvaluesTruncated,

    #[error("quadrature cost {cost:.3e} exceeds the configured cap {cap:.3e}")]
    QuadratureBudgetExceeded { cost: f64, cap: f64 },

    #[error("conditioning values have zero spread; pass a bandwidth explicitly")]
    DegenerateSpread,

    #[error("logistic regression diverged; the data look separated")]
    SeparationDetected,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on `{path}`: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, CfbError>;
