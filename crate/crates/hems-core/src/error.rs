//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (bad layer sizes, bounds, grids, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input dimension does not match what the operation expects.
    #[error("shape error: {0}")]
    Shape(String),

    /// A numeric quantity is NaN or infinite where a finite value is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input data (CSV cell, missing column, invariant violation).
    #[error("parse error: {0}")]
    Parse(String),

    /// Index or slot outside the valid range.
    #[error("range error: {0}")]
    Range(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The environment has consumed its trace; reset before stepping again.
    #[error("episode exhausted: no trace slots remain")]
    EpisodeExhausted,

    /// Training diverged or produced non-finite losses.
    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}
