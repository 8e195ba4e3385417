use thiserror::Error;

/// Errors produced by tensor, pooling, layer, data and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),

    #[error("parameter error: {0}")]
    Param(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("parse error in token `{token}`: {msg}")]
    Parse { token: String, msg: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NanLoss { epoch: usize, batch: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
