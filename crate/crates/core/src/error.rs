use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("patching error: {0}")]
    Patch(String),

    #[error("layer ({row}, {col}): {source}")]
    Layer {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("teacher under-trained: test accuracy {accuracy:.4} < {required:.2}")]
    TeacherUnderTrained { accuracy: f64, required: f64 },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised while reading or writing feature dumps and CSV files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic {found:?}, expected \"FDMP\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported version {0}, expected 1")]
    BadVersion(u32),

    #[error("unknown dtype code {0}")]
    BadDtype(u8),

    #[error("ndim {0} outside 1..=4")]
    BadNdim(u8),

    #[error("length mismatch: header declares {expected} payload bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("label count mismatch: {0}")]
    LabelCount(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] Error),
}
