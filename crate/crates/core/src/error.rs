use thiserror::Error;

/// Errors produced by the tracking engine.
#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TrackerError>;

impl TrackerError {
    /// Process exit code class for the CLI (2 config, 3 data, 4 numerical).
    pub fn exit_code(&self) -> i32 {
        match self {
            TrackerError::Config(_) => 2,
            TrackerError::Data(_) | TrackerError::Io(_) | TrackerError::Csv(_)
            | TrackerError::Json(_) => 3,
            TrackerError::Numerical(_) => 4,
        }
    }
}
