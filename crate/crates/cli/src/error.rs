use std::path::PathBuf;

use mres_core::CoreError;
use mres_policy::PolicyError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: Box<CliError> },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for usage errors, 2 for bad or unreadable data, 3 for failures
    /// inside the numerical code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::File { source, .. } => source.exit_code(),
            CliError::Policy(PolicyError::Tensor(_)) => 3,
            _ => 2,
        }
    }

    pub(crate) fn at(path: &std::path::Path) -> impl FnOnce(CliError) -> CliError + '_ {
        move |e| CliError::File {
            path: path.to_path_buf(),
            source: Box::new(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
