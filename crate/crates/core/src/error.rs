use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unreliable gradient check: {0}")]
    UnreliableCheck(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Prefixes the message with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{stage}: {m}")),
            Error::Contract(m) => Error::Contract(format!("{stage}: {m}")),
            Error::NonFinite(m) => Error::NonFinite(format!("{stage}: {m}")),
            other => other,
        }
    }
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
