use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context}: {left:?} vs {right:?}")]
    Dimension {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("kernel size {kernel} exceeds input length {length}")]
    KernelTooLarge { kernel: usize, length: usize },

    #[error("pooling window {window} exceeds input length {length}")]
    EmptyOutput { window: usize, length: usize },

    #[error("label error: {0}")]
    Label(String),

    #[error("state error: {0}")]
    State(&'static str),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("client {client_id}: {source}")]
    Client {
        client_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            context,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
