use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] primelab_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    /// Malformed configuration or command line.
    #[error("configuration error: {0}")]
    Config(String),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Json(_) => 1,
            _ => 2,
        }
    }
}

pub type LabResult<T> = Result<T, LabError>;
