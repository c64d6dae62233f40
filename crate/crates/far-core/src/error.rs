//! Error types shared across the crate.

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Malformed file contents; `row`/`col` are 1-based data positions.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// A numerical procedure broke down (non-finite values, singular system).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A metric has no defined value for the given inputs.
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// A simulation was refused because the model is not stationary.
    #[error("nonstationary model: {0}")]
    Nonstationary(String),

    /// Filesystem failure, with the offending path attached.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 input, 2 numerical, 3 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::UndefinedMetric(_)
            | Error::Nonstationary(_) => 1,
            Error::Numerical(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
