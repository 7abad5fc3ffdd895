use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },
    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },
    #[error("checkpoint does not match configuration: {0}")]
    ConfigMismatch(String),
    #[error("training failed at iteration {iteration}: {msg}")]
    Training { iteration: u64, msg: String },
    #[error("metric error: {0}")]
    Metric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes used by the command-line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Image { .. } | Error::Checkpoint { .. } => exit::IO,
            Error::Config(_) | Error::ConfigMismatch(_) => exit::CONFIG,
            Error::Tensor(TensorError::Dimension { .. }) => exit::CONFIG,
            Error::Tensor(_) | Error::Training { .. } | Error::Metric(_) => exit::NUMERIC,
        }
    }
}
