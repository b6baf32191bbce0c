use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller-supplied value is out of its allowed range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An operation was invoked in the wrong order (e.g. backward before forward).
    #[error("invalid state: {0}")]
    State(String),

    /// Training diverged or saw a non-finite loss.
    #[error("training error: {0}")]
    Training(String),

    /// A dataset directory could not be ingested.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// A binary container or text file is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint does not belong to the architecture it is loaded into.
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    /// An experiment configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {}: {source}", path.display())]
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
}

pub type Result<T> = std::result::Result<T, Error>;
