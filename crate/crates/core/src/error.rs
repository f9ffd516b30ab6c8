use std::path::PathBuf;

use adgan_tensor::TensorError;
use thiserror::Error;

use crate::data::DataError;
use crate::train::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("attribute {axis} index {index} outside [0, {size})")]
    AttributeRange {
        axis: &'static str,
        index: usize,
        size: usize,
    },

    #[error("age must be non-negative, got {0}")]
    NegativeAge(i64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{network}: {detail}")]
    Network {
        network: &'static str,
        detail: String,
    },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("non-finite value in `{tensor}` at iteration {iteration}")]
    NonFinite { tensor: String, iteration: u64 },

    #[error("gradient reached frozen parameter `{0}`")]
    FrozenViolation(String),

    #[error("image grid: {0}")]
    Grid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn network(network: &'static str, detail: impl Into<String>) -> Self {
        Error::Network {
            network,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
