use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("retraction failed: QR factor has a zero diagonal entry")]
    RetractionFailure,

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("line search failed after {0} backtracking steps")]
    LineSearchFailure(u32),

    #[error("n = {n} exceeds the size guard of {max_n}; raise it with --max-n")]
    SizeGuard { n: usize, max_n: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
