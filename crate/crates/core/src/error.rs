use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("propensity {value} at row {row} is outside the overlap band ({eps}, 1 - {eps})")]
    Overlap { row: usize, value: f64, eps: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("cdf is zero at {0}; truncated mean undefined")]
    Domain(f64),

    #[error("bracket [{lo}, {hi}] has no interior maximum")]
    Search { lo: f64, hi: f64 },

    #[error("design matrix is rank deficient (condition number {condition:.3e})")]
    SingularDesign { condition: f64 },

    #[error("Hessian is numerically singular (condition number {condition:.3e})")]
    SingularHessian { condition: f64 },

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("fold {fold} is empty")]
    Fold { fold: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Data(_)
            | Error::Overlap { .. }
            | Error::Dimension { .. }
            | Error::Fold { .. }
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::Json(_) => ErrorClass::Data,
            Error::Domain(_)
            | Error::Search { .. }
            | Error::SingularDesign { .. }
            | Error::SingularHessian { .. }
            | Error::NonFiniteLoss { .. } => ErrorClass::Numerical,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
