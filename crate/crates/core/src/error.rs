use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("empty volume")]
    EmptyVolume,

    #[error("missing mask for pathological image {0}")]
    MissingMask(PathBuf),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        detail: String,
    },

    #[error("registration produced a non-finite displacement field")]
    RegistrationDiverged,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::EmptyDataset(_) | Error::MissingMask(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
