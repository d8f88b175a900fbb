use thiserror::Error;

/// Errors raised by the engine.
///
/// `Shape` and `Contract` are caller bugs (a violated precondition); the rest
/// come from data, configuration or numerics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("quantization overflow: {0}")]
    Overflow(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
