//! Error type shared across the library and the CLI.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments or inconsistent caller-supplied values.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Malformed data files, schema mismatches, or inconsistent artifacts.
    #[error("data error: {0}")]
    Data(String),
    /// Numerical failure: factorization breakdown, non-finite objective, ...
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// JSON (de)serialization failure (treated as a schema problem).
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    /// CSV (de)serialization failure (treated as a data problem).
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code the CLI maps this error to:
    /// 2 usage, 3 data/schema, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
