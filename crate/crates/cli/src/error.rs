use grad::GradError;
use serde::Serialize;
use thiserror::Error;
use vfg::VfgError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] VfgError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

/// The machine-readable error line written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: ErrorKind,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Config(_) | CliError::Core(VfgError::Config(_)) => ErrorKind::Config,
            CliError::Core(VfgError::Grad(GradError::Checkpoint(_) | GradError::Io(_))) => ErrorKind::Data,
            CliError::Core(VfgError::NonFiniteLoss { .. } | VfgError::Grad(_)) => ErrorKind::Numeric,
            CliError::Core(_) | CliError::Io(_) => ErrorKind::Data,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let error = self.kind();
        ErrorReport { error, exit_code: error.exit_code(), message: self.to_string() }
    }
}
