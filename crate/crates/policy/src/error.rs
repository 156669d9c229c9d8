use mres_core::CoreError;
use mres_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    #[error("infeasible solution: {0}")]
    Infeasible(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PolicyError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PolicyError::InvalidArgument(msg.into())
    }
}
