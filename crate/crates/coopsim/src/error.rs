use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{}:{line}:{column}: {message}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration: {0}")]
    Usage(String),

    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Core(#[from] coopsim_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl AppError {
    pub fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        AppError::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use coopsim_core::Error as E;
        match self {
            AppError::Config { .. } | AppError::Usage(_) => EXIT_CONFIG,
            AppError::Data { .. } | AppError::Io { .. } | AppError::Csv(_) => EXIT_DATA,
            AppError::Invariant(_) => EXIT_INVARIANT,
            AppError::Core(e) => match e {
                E::InvalidPose(_) | E::Config(_) | E::Shape { .. } | E::Topology(_) | E::Singular(_) => EXIT_CONFIG,
                E::FrameMismatch { .. } | E::StreamMismatch { .. } | E::InvalidBox(_) | E::Payload(_) => EXIT_DATA,
                E::Invariant(_) => EXIT_INVARIANT,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
