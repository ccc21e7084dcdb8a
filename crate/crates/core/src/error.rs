use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    /// Every position of a softmax row was masked out.
    #[error("masked softmax: row {row} has empty support")]
    EmptySupport { row: usize },

    #[error("backward: loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("token id {id} out of vocabulary (size {vocab_size})")]
    OutOfVocabulary { id: usize, vocab_size: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error at {path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("cannot align answer {answer:?} at char {start}")]
    Alignment { answer: String, start: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    /// A sweep cell failed; `completed` cells were written before the abort.
    #[error("sweep cell {cell} failed after {completed} completed runs: {source}")]
    Sweep {
        cell: String,
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
