use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Every variant maps onto a short, stable code (see [`Error::code`]) so the
/// command line can prefix failures in a machine-parsable way.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format for {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },

    #[error("image codec error on {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("training fault at step {step}: {detail}")]
    TrainingFault { step: usize, detail: String },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "E_DIM",
            Error::Argument(_) => "E_ARG",
            Error::NonFinite(_) => "E_NONFINITE",
            Error::Io { .. } => "E_IO",
            Error::UnsupportedFormat { .. } => "E_FORMAT",
            Error::Image { .. } => "E_IMAGE",
            Error::VersionMismatch { .. } => "E_VERSION",
            Error::Corrupt(_) => "E_CORRUPT",
            Error::TrainingFault { .. } => "E_TRAIN",
            Error::Serde(_) => "E_SERDE",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
