use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("class {class} has {available} unassigned samples, plan needs {needed}")]
    Capacity {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("invalid partition plan: {0}")]
    InvalidPlan(String),

    #[error("client {client_id} diverged (non-finite loss) in round {round}")]
    DivergedClient { client_id: usize, round: usize },

    #[error("centralized training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot aggregate an empty update list")]
    EmptyAggregation,
}

/// Failures while reading IDX image/label containers.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated file, header promises {expected} bytes of payload, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
}
