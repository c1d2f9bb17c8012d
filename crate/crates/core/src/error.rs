use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient data for label `{label}`: have {have}, need {need}")]
    InsufficientData {
        label: String,
        have: usize,
        need: usize,
    },

    #[error("template error: {0}")]
    Template(String),

    #[error("state error: {0}")]
    State(String),

    /// Transport-level failure talking to a backend. `retryable` is set for
    /// connection failures, timeouts and 5xx responses.
    #[error("backend error{}: {message}", if *.retryable { " (retryable)" } else { "" })]
    Backend { retryable: bool, message: String },

    #[error("request error: {0}")]
    Request(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): non-finite loss")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("all {} grid variants failed: {}", .0.len(), .0.join("; "))]
    GridFailed(Vec<String>),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }

    /// Name of the failing pipeline stage, if this error came out of one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
