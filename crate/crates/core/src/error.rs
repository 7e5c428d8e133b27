use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown configuration key `{0}`")]
    UnknownConfigKey(String),

    #[error("malformed line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("dataset has no views")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("file not found: {path} ({context})")]
    FileNotFound { path: PathBuf, context: String },

    #[error("cannot read image {path}: {message}")]
    UnreadableImage { path: PathBuf, message: String },

    #[error("bad scene file: {0}")]
    Format(String),

    #[error("mask {path} has non-binary value {value}")]
    NonBinaryMask { path: PathBuf, value: u16 },

    #[error("unknown scene or segment `{0}`")]
    UnknownTarget(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
