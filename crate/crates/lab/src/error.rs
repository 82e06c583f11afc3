use std::path::PathBuf;

/// Failures of the laboratory front end.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] mest_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: invalid JSON: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Checkpoint { path: PathBuf, source: crate::checkpoint::CheckpointError },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        LabError::Format { path: path.into(), msg: msg.into() }
    }

    /// Process exit code: 2 for usage and configuration errors, 1 for
    /// everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage(_) | LabError::Json { .. } | LabError::Core(mest_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
