//! Shared error type for the simulator.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or index mismatch between a value and what an operation expects.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid argument to an operation (empty batch, out-of-range rate, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Bad key, bad value, or violated invariant in a run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed binary input; `offset` is the byte position of the failure.
    #[error("parse error at byte {offset}: {what}")]
    Parse { offset: usize, what: String },

    /// Hash-chain or block linkage violation.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A federated round could not complete (e.g. every update rejected).
    #[error("round aborted: {0}")]
    Aborted(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
