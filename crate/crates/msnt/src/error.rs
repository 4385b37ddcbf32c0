use std::path::Path;
use std::process::ExitCode;

/// Failure of a command, classified by the exit status it maps to.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad arguments or configuration; exit status 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input; exit status 2.
    #[error("{0}")]
    Data(String),
    /// Failure while training, evaluating or writing results; exit status 3.
    #[error("{0}")]
    Runtime(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Runtime(_) => 3,
        })
    }

    pub fn reading(path: &Path, err: impl std::fmt::Display) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }

    pub fn writing(path: &Path, err: impl std::fmt::Display) -> Self {
        AppError::Runtime(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<msnt_core::Error> for AppError {
    fn from(e: msnt_core::Error) -> Self {
        use msnt_core::Error as E;
        match e {
            E::Config(_) => AppError::Usage(e.to_string()),
            E::Data(_) | E::Checkpoint(_) => AppError::Data(e.to_string()),
            E::Shape { .. } | E::Index { .. } | E::Contract(_) | E::Augment(_) => AppError::Runtime(e.to_string()),
        }
    }
}
