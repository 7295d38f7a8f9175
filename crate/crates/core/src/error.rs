use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("training error in {phase} at step {step}: {message}")]
    Training {
        phase: String,
        step: usize,
        message: String,
    },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("incompatible file {path}: {message}")]
    Incompatible { path: PathBuf, message: String },

    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("stale retrieval: built with version {found}, current is {expected}")]
    StaleVersion { expected: u64, found: u64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn training(phase: &str, step: usize, message: impl Into<String>) -> Self {
        Error::Training {
            phase: phase.to_string(),
            step,
            message: message.into(),
        }
    }
}

macro_rules! arg_err {
    ($($t:tt)*) => { $crate::error::Error::Argument(format!($($t)*)) };
}
macro_rules! config_err {
    ($($t:tt)*) => { $crate::error::Error::Config(format!($($t)*)) };
}
pub(crate) use arg_err;
pub(crate) use config_err;
