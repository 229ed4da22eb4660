use std::path::PathBuf;

/// Error type shared across the waveloc modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    ShapeMismatch {
        expected: String,
        actual: String,
        context: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unmeasurable: {0}")]
    Unmeasurable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("wav error at {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn wav(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Wav {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
