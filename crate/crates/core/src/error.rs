use std::path::PathBuf;

/// Errors raised anywhere in the detection pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("sprite placement at ({x},{y}) with size {size} clips a {width}x{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        size: usize,
        width: usize,
        height: usize,
    },

    #[error("sprite has no opaque pixels")]
    EmptySprite,

    #[error("need {needed} base images, only {available} supplied")]
    InsufficientBases { needed: usize, available: usize },

    #[error("split quotas cannot be satisfied: {0}")]
    QuotaUnsatisfiable(String),

    #[error("bad tensor shape: {0}")]
    BadShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("cannot select from an empty list")]
    EmptyList,

    #[error("scores need both positive and negative labels")]
    DegenerateLabels,

    #[error("no positive samples")]
    NoPositives,

    #[error("no image was classified as forged at threshold {0}")]
    NoDetectedForgeries(f64),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing artifact {0}")]
    Missing(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
