//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{what} index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("no scene points within radius {radius} of the sampling center")]
    DegenerateSceneWindow { radius: f64 },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint config hash mismatch: checkpoint has {found}, current config hashes to {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite loss ({value}) in phase {phase}, epoch {epoch}, step {step}")]
    NonFiniteLoss {
        phase: String,
        epoch: usize,
        step: usize,
        value: f64,
    },

    #[error("infeasible generation spec: {0}")]
    InfeasibleSpec(String),

    #[error("{path}: {source}")]
    FileAccess {
        path: String,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for data problems, 3 for numerical
    /// failures (usage errors are handled by the argument parser as 1).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }

    /// Wraps an io error with the path it occurred on.
    pub fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::FileAccess {
            path: path.display().to_string(),
            source,
        }
    }
}
