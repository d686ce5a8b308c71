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

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate score: theta(Q, D) = 0 for document {doc_id}")]
    DegenerateScore { doc_id: String },

    #[error(transparent)]
    Scorer(#[from] ScorerError),

    #[error("config error: {0}")]
    Config(String),

    #[error("index format error: {0}")]
    IndexFormat(String),

    /// A run stopped part-way; completed work was saved to `checkpoint` if set.
    #[error("run aborted after {completed} of {total} explanations{}: {source}", checkpoint_note(.checkpoint))]
    Aborted {
        completed: usize,
        total: usize,
        checkpoint: Option<PathBuf>,
        #[source]
        source: Box<Error>,
    },
}

fn checkpoint_note(checkpoint: &Option<PathBuf>) -> String {
    match checkpoint {
        Some(p) => format!(" (progress saved to {})", p.display()),
        None => String::new(),
    }
}

impl Error {
    /// The innermost error, looking through [`Error::Aborted`].
    pub fn root(&self) -> &Error {
        match self {
            Error::Aborted { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        source_name: impl Into<String>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }
}

/// Failures raised while talking to a scorer.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScorerError {
    #[error("cannot connect to scorer at {address}: {message}")]
    Unreachable { address: String, message: String },

    #[error("scorer handshake failed: {0}")]
    Handshake(String),

    #[error("scorer request {request_id} timed out after {timeout_ms} ms")]
    Timeout { request_id: u64, timeout_ms: u64 },

    #[error("scorer protocol violation on request {request_id}: {message}")]
    Protocol { request_id: u64, message: String },

    #[error("scorer reported error for request {request_id}: {message}")]
    Remote { request_id: u64, message: String },

    #[error("scorer connection closed: {0}")]
    Closed(String),

    #[error("scorer returned a non-finite score for request {request_id}")]
    NonFinite { request_id: u64 },
}

impl ScorerError {
    pub fn request_id(&self) -> Option<u64> {
        match self {
            ScorerError::Timeout { request_id, .. }
            | ScorerError::Protocol { request_id, .. }
            | ScorerError::Remote { request_id, .. }
            | ScorerError::NonFinite { request_id } => Some(*request_id),
            _ => None,
        }
    }
}
