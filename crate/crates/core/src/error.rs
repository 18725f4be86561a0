use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A dataset line could not be parsed or failed validation.
    #[error("{message} at line {line}")]
    Parse { line: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("config error: {0}")]
    Config(String),
    /// A caller broke a documented precondition (empty input, mismatched lengths).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("loss statistics queried before the first update")]
    Uninitialized,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite {quantity} for sample {sample_id}")]
    NonFinite { quantity: &'static str, sample_id: u64 },
    #[error("non-finite gradient component {index}")]
    NonFiniteGradient { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
