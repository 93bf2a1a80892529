use std::path::PathBuf;

/// Errors surfaced by dataset ingestion, numeric estimators, training, and
/// experiment plumbing. The CLI maps these onto process exit codes
/// (config 2, data 3, numeric 4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty after filtering (min_interactions={min_interactions})")]
    EmptyDataset { min_interactions: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("target item {target} is not among the {len} candidates")]
    TargetMissing { target: usize, len: usize },

    #[error("training aborted at epoch {epoch}, step {step}: non-finite loss\n{dump}")]
    NumericAbort {
        epoch: usize,
        step: usize,
        dump: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::EmptyDataset { .. } | Error::Io(_) => 3,
            Error::NumericAbort { .. } | Error::NonFinite { .. } => 4,
            _ => 1,
        }
    }
}
