use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] demobandit_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid config: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl AppError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    /// Bad input (exit code 1) as opposed to a failure while running (exit code 2).
    pub fn is_config(&self) -> bool {
        match self {
            AppError::Core(e) => e.is_config(),
            AppError::Json { .. } | AppError::Parse { .. } | AppError::Usage(_) => true,
            AppError::Io { .. } | AppError::ThreadPool(_) => false,
        }
    }

    pub fn exit_code(&self) -> u8 {
        if self.is_config() {
            1
        } else {
            2
        }
    }
}

pub type Result<T, E = AppError> = std::result::Result<T, E>;
