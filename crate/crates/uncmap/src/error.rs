//! Crate-wide error type and result alias.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: grid dimensions, taxonomy, weights, paths.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid data: labels out of range, shape mismatch, malformed file.
    #[error("data error: {0}")]
    Data(String),

    /// Every candidate was discarded; no plan can be selected.
    #[error("no safe plan: every candidate was discarded")]
    NoSafePlan,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
