use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("parameter layout mismatch in {0}")]
    Layout(&'static str),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("{consecutive} consecutive aborted episodes (last at episode {episode})")]
    TooManyAborts { episode: usize, consecutive: usize },

    #[error("{path}: size mismatch, header declares {expected} bytes but data has {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: unknown dtype `{dtype}`")]
    UnknownDtype { path: PathBuf, dtype: String },

    #[error("{path}: truncated file")]
    Truncated { path: PathBuf },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
