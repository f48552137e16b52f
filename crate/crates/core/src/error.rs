//! Crate-wide error type.

use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An index (channel, grid coordinate, trial, ...) is out of range.
    #[error("index out of range: {0}")]
    OutOfRange(String),

    /// A binary or CSV payload does not match the expected format.
    #[error("malformed data: {0}")]
    Format(String),

    /// Two objects that must agree (sample rates, dimensions, labels) do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// A numeric computation produced a non-finite value.
    #[error("numeric overflow: {0}")]
    NonFinite(String),

    /// The simulated culture left its physical operating regime.
    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::OutOfRange(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }
}
