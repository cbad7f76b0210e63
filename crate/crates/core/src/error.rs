use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },

    #[error("missing label column")]
    MissingLabel,

    #[error("class {class} has only {count} samples")]
    TooFewSamples { class: usize, count: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("class {0} has fewer than 2 samples")]
    ClassTooSmall(usize),

    #[error("covariance of class {0} is singular even after ridge regularization")]
    SingularCovariance(usize),

    #[error("OOD parameters are not fitted")]
    NotFitted,

    #[error("OOD threshold is not calibrated")]
    NotCalibrated,

    #[error("probability vector sums to {0}, not 1")]
    NotNormalized(f64),

    #[error("empty input")]
    EmptyInput,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{name} = {value} is out of range")]
    OutOfRange { name: &'static str, value: f64 },

    #[error("query budget exhausted ({used} of {budget} used, {requested} requested)")]
    BudgetExhausted {
        used: u64,
        budget: u64,
        requested: u64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported format version {0}")]
    FormatVersion(u32),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
