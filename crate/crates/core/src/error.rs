use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("zero-norm vector where a direction is required")]
    ZeroVector,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("at least two tasks are required, got {0}")]
    TooFewTasks(usize),
    #[error("baseline metric value is zero at index {0}")]
    ZeroBaseline(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
