use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("segment {0} has no speaker turns")]
    EmptySegment(usize),

    #[error("segment {0} has no windows")]
    NoWindows(usize),

    #[error("interval [{start}, {end}] has non-positive duration")]
    NonPositiveDuration { start: f64, end: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("attention mask row {0} blocks every key")]
    BlockedRow(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("label {label} exceeds the maximum of {max} clusters")]
    TooManyClusters { label: usize, max: usize },

    #[error("no gradient recorded for parameter {0}")]
    MissingGradient(String),

    #[error("prototype sampling failed: {0}")]
    Sampling(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("meeting sets differ: {0}")]
    MismatchedMeetings(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
