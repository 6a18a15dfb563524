use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
