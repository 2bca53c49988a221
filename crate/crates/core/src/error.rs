use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = UdnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum UdnError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index {index} out of range for {bound} classes")]
    Index { index: usize, bound: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A non-finite value showed up while training.
    #[error("non-finite {term} at epoch {epoch}")]
    NonFinite { epoch: usize, term: String },

    #[error("lambda diverged to {lambda} at epoch {epoch} (guard {guard})")]
    Divergence { epoch: usize, lambda: f64, guard: f64 },

    #[error("{path}: parse error at row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UdnError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        UdnError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UdnError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by the numeric guards of the training loop.
    pub fn is_numeric_abort(&self) -> bool {
        matches!(self, UdnError::NonFinite { .. } | UdnError::Divergence { .. })
    }
}
