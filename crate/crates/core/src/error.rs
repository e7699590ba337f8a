use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, MarsError>;

#[derive(Debug, thiserror::Error)]
pub enum MarsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),
}

impl MarsError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MarsError::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        MarsError::Numeric(msg.into())
    }
}
