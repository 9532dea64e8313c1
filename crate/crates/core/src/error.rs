use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file did not follow its declared layout.
    #[error("format error at {position}: {message}")]
    Format { position: String, message: String },

    /// Data parsed but violated a contract (channel counts, NaN samples, ...).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("empty output: {0}")]
    Empty(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch} ({component} = {value})")]
    Divergence {
        epoch: usize,
        component: &'static str,
        value: f64,
    },

    #[error("rank-deficient covariance; degenerate channels: {channels:?}")]
    RankDeficient { channels: Vec<usize> },

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn format(position: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            position: position.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
