use thiserror::Error;

#[derive(Debug, Error)]
pub enum OmniError {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} out of range: {value} (must be < {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite input value")]
    NonFinite,

    #[error("missing {0}")]
    Missing(String),

    #[error("image codec: {0}")]
    Image(String),

    #[error("wav codec: {0}")]
    Wav(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, OmniError>;

