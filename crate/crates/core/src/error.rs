use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Tensor(#[from] urm_tensor::TensorError),
    #[error(transparent)]
    Task(#[from] urm_tasks::TaskError),
    #[error("non-finite {what} in `{name}`")]
    NonFinite { what: &'static str, name: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("batch: {0}")]
    Batch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
