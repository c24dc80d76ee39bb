//! Error taxonomy shared across the crate.

use thiserror::Error;

/// Errors produced by the pipeline stages.
///
/// The variants map onto the process exit codes used by the CLI:
/// configuration and bounds problems are caller mistakes, data problems
/// come from ingesting external files, training problems are runtime
/// failures inside an optimization loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training error: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn bounds(msg: impl Into<String>) -> Self {
        Error::Bounds(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}
