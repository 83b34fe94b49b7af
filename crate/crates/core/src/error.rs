use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("no output head for task {0}")]
    MissingHead(u32),

    #[error("activation cache is stale: {0}")]
    InvalidCache(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at task {task}, epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        task: u32,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("parse error in {path} at byte offset {offset}: {reason}")]
    Parse {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("accuracy matrix is missing entry {0}")]
    IncompleteMatrix(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("class {0} has no samples")]
    MissingClass(u32),

    #[error("session {session} reuses classes seen earlier: {classes:?}")]
    SessionOverlap { session: usize, classes: Vec<u32> },

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
