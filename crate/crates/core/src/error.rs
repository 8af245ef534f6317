use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed panel: {0}")]
    Malformed(String),
    #[error("unknown variable role `{0}`")]
    UnknownRole(String),
    #[error("timestamps not strictly increasing for node `{node}` at {at}")]
    NonMonotone { node: String, at: String },
    #[error("segment of {len} steps is shorter than the required {need}")]
    TooShort { len: usize, need: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("insufficient trailing context: {0}")]
    InsufficientContext(String),
    #[error("backbone `{0}` requires a graph")]
    MissingGraph(&'static str),
    #[error("model archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
