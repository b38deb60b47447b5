use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
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

    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("duplicate id {0}")]
    DuplicateId(String),

    #[error("unknown task id {0}")]
    UnknownTask(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("silent input {0}: no text surface and no visual tokens")]
    SilentInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("gateway error: {0}")]
    Gateway(String),

    #[error("missing enhanced records for: {}", .0.join(", "))]
    MissingEnhanced(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("report mismatch: {0}")]
    ReportMismatch(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
