use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DcrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DcrError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no trainable examples: {0}")]
    NoTrainableExamples(String),

    #[error("example {id}: {message}")]
    Example { id: String, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl DcrError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        DcrError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DcrError::Io {
            path: path.into(),
            source,
        }
    }
}
