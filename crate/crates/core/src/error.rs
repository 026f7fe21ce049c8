use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: kernel/window {window:?} does not fit input {input:?}; pad the input or shrink the window")]
    WindowTooLarge {
        op: &'static str,
        window: Vec<usize>,
        input: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label vector has length {found}, expected {expected} categories")]
    LabelCount { expected: usize, found: usize },

    #[error("click counts carry no signal (all zero)")]
    NoSignal,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("checkpoint config mismatch on `{field}`: checkpoint has {checkpoint}, supplied {supplied}")]
    CheckpointConfig {
        field: String,
        checkpoint: String,
        supplied: String,
    },

    #[error("corrupt checkpoint payload: {0}")]
    CheckpointCorrupt(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
