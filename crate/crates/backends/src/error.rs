use std::path::PathBuf;

use phrasedet_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    /// No stored record for the key (bundle-relative path).
    #[error("no record for {key}")]
    NotFound { key: String },

    /// A record exists but was produced for different inputs.
    #[error("stale record {key}: expected {expected}, found {found}")]
    Stale {
        key: String,
        expected: String,
        found: String,
    },

    #[error("{backend} backend unavailable: {reason}")]
    Unavailable { backend: &'static str, reason: String },

    /// Schema violation; `field` is the JSON path of the offending value.
    #[error("protocol error at `{field}`: {reason}")]
    Protocol { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl BackendError {
    pub(crate) fn protocol(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Protocol {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = BackendError> = std::result::Result<T, E>;
