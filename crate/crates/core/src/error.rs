use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible solution: {0}")]
    InfeasibleSolution(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("instance with {n} nodes exceeds the limit of {limit} for {solver}")]
    TooLarge {
        solver: &'static str,
        n: usize,
        limit: usize,
    },
    #[error("degenerate hierarchy: {0}")]
    DegenerateHierarchy(String),
    #[error("unknown {what} '{name}'")]
    Unknown { what: &'static str, name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}
