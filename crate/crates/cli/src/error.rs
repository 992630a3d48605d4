use std::path::PathBuf;

use phrasedet_backends::BackendError;
use phrasedet_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or unreadable inputs; nothing was run.
    #[error("configuration error: {0}")]
    Config(String),

    /// A backend failed or returned inconsistent data at `stage` for `key`.
    #[error("{stage} failed for {key}: {source}")]
    Backend {
        stage: &'static str,
        key: String,
        #[source]
        source: BackendError,
    },

    /// Calibration aborted (aligner unavailable in strict mode, or fatal).
    #[error("align failed for image {image_id}: {message}")]
    Align { image_id: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 for configuration errors, 3 for backend errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend { .. } | CliError::Align { .. } => 3,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(stage: &'static str, key: impl Into<String>, source: BackendError) -> Self {
        CliError::Backend {
            stage,
            key: key.into(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
