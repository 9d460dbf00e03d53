use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("cell value {value} outside the {limit}-color palette")]
    Color { value: u8, limit: usize },
    #[error("grid {rows}x{cols} needs {needed} tokens but the budget is {budget}")]
    Overflow {
        rows: usize,
        cols: usize,
        needed: usize,
        budget: usize,
    },
    #[error("malformed token sequence: {0}")]
    Malformed(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("unsupported parameters: {0}")]
    Unsupported(String),
    #[error("instance {id} fails its own oracle: {reason}")]
    Oracle { id: usize, reason: String },
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TaskError>;
