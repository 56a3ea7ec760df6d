use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample set is empty")]
    EmptySamples,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate at sample {index}")]
    NonFinite { index: usize },

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("coordinate {value} of sample {index} lies outside the unit box")]
    OutsideUnitBox { index: usize, value: f64 },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("cell {cell} has weight {weight} but no sample reached it after {batches} batches; try fewer bins")]
    UnreachableCell { cell: usize, weight: f64, batches: usize },

    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),

    #[error("baseline diagnostic {0} outside [0.8, 1.2]")]
    BaselineDiagnostic(f64),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("row count mismatch: parameter file has {params} rows, data file has {data}")]
    RowMismatch { params: usize, data: usize },

    #[error("config error at {pointer}: {msg}")]
    Config { pointer: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn config(pointer: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { pointer: pointer.into(), msg: msg.into() }
    }
}
