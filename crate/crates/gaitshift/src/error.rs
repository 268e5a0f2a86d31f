use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GaitError>;

#[derive(Debug, Error)]
pub enum GaitError {
    /// A zero-norm vector reached an operation that needs a direction.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("batch contains no valid (anchor, positive, negative) triple")]
    EmptyTriplet,

    #[error("anchor set is empty")]
    EmptyAnchors,

    #[error("cannot sample a {p}x{k} batch: {available}")]
    InfeasibleBatch {
        p: usize,
        k: usize,
        available: String,
    },

    #[error("failed to load sample {sample}: {reason}")]
    Load { sample: String, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("evaluation protocol: {0}")]
    Protocol(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GaitError {
    /// Stable machine-readable code used by the command-line tool.
    pub fn code(&self) -> &'static str {
        match self {
            GaitError::Degenerate(_) => "E_DEGENERATE",
            GaitError::Parameter(_) => "E_PARAMETER",
            GaitError::EmptyTriplet => "E_EMPTY_TRIPLET",
            GaitError::EmptyAnchors => "E_EMPTY_ANCHORS",
            GaitError::InfeasibleBatch { .. } => "E_INFEASIBLE_BATCH",
            GaitError::Load { .. } => "E_LOAD",
            GaitError::Format { .. } => "E_FORMAT",
            GaitError::Protocol(_) => "E_PROTOCOL",
            GaitError::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        GaitError::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GaitError::Io {
            path: path.into(),
            source,
        }
    }
}
