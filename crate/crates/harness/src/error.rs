//! Harness error type with process exit-code mapping.

use std::path::PathBuf;

/// Errors raised by dataset ingestion, archives, evaluation, and the
/// command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fovdef_core::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: configuration mistakes are 2, broken or
    /// missing data is 3, everything else is a runtime failure, 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Core(fovdef_core::Error::Config(_)) => 2,
            Error::Core(fovdef_core::Error::Bounds(_)) => 2,
            Error::Data(_) => 3,
            Error::Core(fovdef_core::Error::Data(_)) => 3,
            Error::Io { .. } | Error::Image { .. } | Error::Json { .. } => 3,
            Error::Core(fovdef_core::Error::Training(_)) => 1,
        }
    }
}
