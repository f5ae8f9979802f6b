use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum MtoError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("numeric divergence at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MtoError>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> MtoError {
    MtoError::Dimension {
        op,
        detail: detail.into(),
    }
}
