//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or inconsistent settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or vector dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A computation produced or received non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A set exceeded the maximum cardinality the autoencoder supports.
    #[error("set cardinality {got} exceeds supported maximum {max}")]
    Capacity { got: usize, max: usize },

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A serialized artifact is malformed or has an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
