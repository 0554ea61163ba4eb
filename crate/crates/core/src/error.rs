use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),

    #[error(transparent)]
    Grid(#[from] crate::quantile::GridError),

    #[error(transparent)]
    Quantile(#[from] crate::quantile::QuantileError),

    #[error(transparent)]
    Distance(#[from] crate::distance::DistanceError),

    #[error(transparent)]
    Design(#[from] crate::survival::DesignError),

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error(transparent)]
    Snapshot(#[from] crate::snapshot::SnapshotError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, config) as
    /// opposed to failures while running a stage.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Ingest(_) | Error::Config(_) | Error::Snapshot(_) | Error::Format { .. } => {
                true
            }
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Grid(_) | Error::Invalid(_) => true,
            _ => false,
        }
    }
}
