use thiserror::Error;

/// Errors produced by the tensor algebra, solvers and file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense tensor of {requested} entries exceeds the cap of {cap}")]
    TooLarge { requested: u128, cap: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error in `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}
