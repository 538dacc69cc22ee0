use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: last dimension is empty")]
    EmptyDimension { op: &'static str },

    #[error("softmax row {row} is fully masked")]
    DegenerateRow { row: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward already ran on this graph; call zero_grad first")]
    BackwardTwice,

    #[error("backward has not been run on this graph")]
    NoBackward,

    #[error("node {node} received no gradient (detached from the loss)")]
    Detached { node: usize },

    #[error("non-finite value in {stage}")]
    Numeric { stage: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{channel} id {id} out of range for vocabulary of size {size}")]
    Vocab {
        channel: &'static str,
        id: usize,
        size: usize,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: non-finite loss at batch {batch}")]
    Diverged { batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
