use thiserror::Error;
use urm_core::CoreError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Task(#[from] urm_tasks::TaskError),
    #[error(transparent)]
    Tensor(#[from] urm_tensor::TensorError),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code: 1 validation or usage failure, 2 numeric failure,
    /// 3 gradient-check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(CoreError::NonFinite { .. }) => 2,
            HarnessError::GradCheck(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
