use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by corpus handling, inference backends, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("document {0} is empty")]
    EmptyDocument(usize),

    #[error("id out of range: {0}")]
    IdOutOfRange(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("count underflow on {0}; statistics bookkeeping is corrupt")]
    CountUnderflow(String),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("responsibility row {row} sums to {sum:.9}, expected 1")]
    CorruptedResponsibilities { row: usize, sum: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
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
