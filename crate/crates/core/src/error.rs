use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("invalid starting point: {0}")]
    InvalidStart(String),

    #[error("parse error at line {line}: {message}")]
    ParseLine { line: usize, message: String },

    #[error("parse error at byte offset {offset}: {message}")]
    ParseOffset { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
