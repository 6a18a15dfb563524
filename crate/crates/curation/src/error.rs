use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("record {id} is malformed: {detail}")]
    Malformed { id: String, detail: String },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("record {id}: {detail}")]
    Validation { id: String, detail: String },
    #[error("scorer failed on {id}: {detail}")]
    Scorer { id: String, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CurationError>;
