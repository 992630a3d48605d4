use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid bounding box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("score {value} at {location} is outside [0, 1]")]
    ScoreOutOfRange { value: f64, location: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("alignment backend failed: {0}")]
    Alignment(String),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u64 },

    #[error("malformed json: {0}")]
    Json(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> CoreError {
    CoreError::Validation(msg.into())
}
