use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("{op}: value count {len} does not match shape {shape:?}")]
    BadLength { op: &'static str, shape: Vec<usize>, len: usize },

    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },

    #[error("loss must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("{0} is not on this tape")]
    UnknownHandle(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GradError>;
