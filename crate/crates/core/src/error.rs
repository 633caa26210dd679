use thiserror::Error;

pub type Result<T, E = PoolError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("time index {found} does not follow {previous}")]
    NonMonotoneTime { previous: u64, found: u64 },

    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported data-generating process: {0}")]
    UnsupportedDgp(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PoolError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PoolError::ParameterDomain(msg.into())
    }
}
