use std::path::PathBuf;

/// Errors surfaced by the CLI, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum TkError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: tunnelkit_core::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String },
}

pub type Result<T, E = TkError> = std::result::Result<T, E>;

impl TkError {
    /// 1 usage, 2 data, 3 stage failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            TkError::Usage(_) => 1,
            TkError::Io { .. } | TkError::Data { .. } | TkError::Invalid(_) => 2,
            TkError::Stage { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TkError::Io { path: path.into(), source }
    }

    pub fn data(context: impl Into<String>, source: tunnelkit_core::Error) -> Self {
        TkError::Data { context: context.into(), source }
    }
}
