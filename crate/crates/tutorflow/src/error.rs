use std::path::PathBuf;

use serde::Serialize;

/// Command failure, carrying the process exit code contract:
/// 1 I/O, 2 validation, 3 numerical.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] tutorflow_core::Error),
}

pub type AppResult<T> = Result<T, AppError>;

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn csv(path: impl Into<PathBuf>, err: csv::Error) -> Self {
        let path = path.into();
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(source) => Self::Io { path, source },
                _ => unreachable!("checked io kind"),
            }
        } else {
            Self::Validation(format!("{}: {err}", path.display()))
        }
    }

    pub fn json(path: impl Into<PathBuf>, err: serde_json::Error) -> Self {
        let path = path.into();
        if err.is_io() {
            Self::Io { path, source: err.into() }
        } else {
            Self::Validation(format!("{}: {err}", path.display()))
        }
    }

    pub fn exit_code(&self) -> i32 {
        use tutorflow_core::Error as E;
        match self {
            Self::Io { .. } => 1,
            Self::Validation(_) => 2,
            Self::Numerical(_) => 3,
            Self::Core(E::Numerical(_) | E::Infeasible(_)) => 3,
            Self::Core(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "io",
            3 => "numerical",
            _ => "validation",
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        let body = ErrorBody {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        };
        serde_json::to_string(&body).expect("error body serializes")
    }
}
