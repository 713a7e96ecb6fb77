use std::path::PathBuf;

/// Errors raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A documented precondition of a constructive operation does not hold.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("set too small for rejection sampling (estimated acceptance {acceptance:.3e})")]
    SetTooSmall { acceptance: f64 },

    #[error("no closed form: {0}")]
    NoClosedForm(String),

    #[error("corrupt grid cache {path} (expected SO3GRID1 format): {reason}")]
    CorruptCache { path: PathBuf, reason: String },

    #[error("search produced an infeasible optimum: {0}")]
    Infeasible(String),

    #[error("conjecture anomaly: {0}")]
    ConjectureAnomaly(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
