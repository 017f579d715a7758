use thiserror::Error;

/// Errors produced by the segmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("mask dimensions must be at least 1x1, got {height}x{width}")]
    ZeroSize { height: usize, width: usize },

    #[error("mask value {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: u8 },

    #[error("soft mask value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("mask is empty")]
    EmptyMask,

    #[error("downsampling factor must be positive")]
    InvalidFactor,

    #[error("malformed run-length string: {0}")]
    MalformedRle(String),

    #[error("click ({row}, {col}) is outside a {height}x{width} image")]
    ClickOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("dataset entry {entry}: {reason}")]
    Dataset { entry: String, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
