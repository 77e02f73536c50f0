use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{what}: index {index} out of range (bound {bound})")]
    Bounds {
        what: String,
        index: usize,
        bound: usize,
    },

    /// A caller-side precondition was not met.
    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("task `{task}`, batch {batch}: {source}")]
    Training {
        task: String,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn bounds(what: impl Into<String>, index: usize, bound: usize) -> Self {
        Error::Bounds {
            what: what.into(),
            index,
            bound,
        }
    }
}
