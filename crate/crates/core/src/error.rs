use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied inconsistent or out-of-range input.
    #[error("invalid input: {0}")]
    Input(String),

    /// A factorization or other numeric routine broke down.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A meta-task record could not be parsed.
    #[error("parse error in record {record}, field `{field}`: {message}")]
    Parse {
        record: usize,
        field: String,
        message: String,
    },

    /// The objective failed to produce a value for a queried point.
    #[error("objective evaluation failed at domain index {index}: {message}")]
    Objective { index: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
