use thiserror::Error;

/// Errors raised by the numerical routines and the problem-file front end.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that must lie in the PD or PSD cone does not.
    #[error("cone violation: {what} has minimum eigenvalue {min_eigenvalue:e}")]
    ConeViolation { what: String, min_eigenvalue: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("eigen-solver did not converge for {0}")]
    NoConvergence(String),

    #[error("unbound variable `{0}`")]
    UnboundVariable(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("solver finished with status {status}")]
    Solver { status: crate::solver::Status },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn cone(what: impl Into<String>, min_eigenvalue: f64) -> Self {
        Error::ConeViolation {
            what: what.into(),
            min_eigenvalue,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
