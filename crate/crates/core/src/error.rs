use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("svd did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("invalid label {label}: {reason}")]
    InvalidLabel { label: usize, reason: String },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("feature file format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("feature file corrupted at byte {offset}: {message}")]
    Corruption { offset: u64, message: String },

    #[error("session layout error: {0}")]
    Layout(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
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
