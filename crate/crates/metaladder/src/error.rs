//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("record {record}: {reason}")]
    Extraction { record: String, reason: String },

    #[error("no final answer found in trace")]
    NoAnswer,

    #[error("annotation parse failure: missing or empty section {0:?}")]
    ParseFailure(String),

    #[error("composition error: format {format} requires {field}")]
    Composition { format: String, field: String },

    #[error("response sections out of canonical order: {0}")]
    SectionOrder(String),

    #[error("endpoint auth failure (HTTP {status}): {body}")]
    Auth { status: u16, body: String },

    #[error("transport error after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },

    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid mock behavior: {0}")]
    MockBehavior(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport and 5xx/429 endpoint errors are worth retrying; everything
    /// else (auth, 4xx, parse) is not.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::Endpoint { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
