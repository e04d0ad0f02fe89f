use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside groundkit.
///
/// The variants are grouped so a front end can map them onto a small exit-code
/// taxonomy: configuration problems, bad input data or files, and numerical
/// divergence.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },

    #[error("schema violation for token {token:?}: {reason}")]
    Schema { token: String, reason: String },

    #[error("kept tokens without feature records: {}", .0.join(", "))]
    MissingFeatures(Vec<String>),

    #[error("duplicate feature record for token index {index} ({token:?})")]
    DuplicateRecord { index: usize, token: String },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("data error at line {line}: {reason}")]
    Data { line: u64, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("unknown block {name:?}; valid blocks: {}", .valid.join(", "))]
    UnknownBlock { name: String, valid: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("experiment cell {cell} failed: {source}")]
    Experiment {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Contract(_) => ErrorClass::Usage,
            Error::Divergence { .. } => ErrorClass::Numerical,
            Error::Experiment { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
