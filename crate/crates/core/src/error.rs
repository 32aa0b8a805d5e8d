use thiserror::Error;

/// Errors raised by the model, simulation and fusion routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-ergodic two-state chain: delta_12 + delta_21 must be positive")]
    NonErgodic,

    #[error("component list is empty")]
    EmptyComponents,

    #[error("state index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("negative time lag {0}")]
    NegativeLag(f64),

    #[error("negative event count {0}")]
    NegativeCount(i64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("horizon mismatch: {left} vs {right}")]
    HorizonMismatch { left: f64, right: f64 },

    #[error("non-finite observation {0}")]
    NonFiniteObservation(f64),

    #[error("no confusion matrix for sensor {0}")]
    MissingConfusion(u32),

    #[error("singular linear system")]
    Singular,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
