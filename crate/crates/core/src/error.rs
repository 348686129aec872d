use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown query id {0}")]
    UnknownQuery(usize),
    #[error("count mismatch: expected {expected}, got {actual}")]
    CountMismatch { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("{0}")]
    Invalid(String),
    #[error("pair {0} is already labeled")]
    AlreadyLabeled(String),
    #[error("unknown pair {0}")]
    UnknownPair(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
