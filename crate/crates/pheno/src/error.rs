use std::path::PathBuf;

/// Failures surfaced by the file formats and commands.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unknown keys or a missing seed.
    #[error("usage: {0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A malformed input line.
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{}: invalid JSON: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] pheno_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        CliError::Core(pheno_core::Error::Validation(msg.into()))
    }

    /// Process exit status: 2 usage, 3 training failure, 4 validation, 1 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_training() => 3,
            CliError::Core(_) | CliError::Parse { .. } | CliError::Json { .. } => 4,
            CliError::Io { .. } => 1,
        }
    }
}
