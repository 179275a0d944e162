use thiserror::Error;

#[derive(Debug, Error)]
pub enum VfgError {
    #[error(transparent)]
    Grad(#[from] grad::GradError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed or out-of-schema input data.
    #[error("data: {0}")]
    Data(String),

    /// Invalid configuration.
    #[error("config: {0}")]
    Config(String),

    /// A sample window could not be assembled from detector data.
    #[error("window {crash_id}: {reason}")]
    Window { crash_id: String, reason: String },

    #[error("need {required} generated samples to reach the target ratio, have {available}")]
    InsufficientGenerated { required: usize, available: usize },

    /// Training diverged.
    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
}

impl VfgError {
    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, VfgError>;
