use std::path::PathBuf;

use thiserror::Error;

use crate::fitting::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("invalid grid: {0}")]
    Grid(String),

    /// An extremum landed on the first or last grid sample.
    #[error("extremum at grid boundary ({which}); widen the detuning range")]
    ExtremumAtBoundary { which: &'static str },

    #[error("optical pumping needs circular polarization, got {0}")]
    Polarization(String),

    #[error("sample size {got} below minimum {min}")]
    SampleSize { got: usize, min: usize },

    #[error("fit did not converge after {} iterations (residual norm {:.3e})", .0.iterations, .0.residual_norm)]
    NoConvergence(Box<FitResult>),

    #[error("damped normal equations are numerically singular")]
    RankDeficient,

    #[error("line {line}, column {column}: {message} (near `{token}`)")]
    Syntax {
        line: usize,
        column: usize,
        token: String,
        message: String,
    },

    #[error("line {line}: {message}")]
    Semantic { line: usize, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures map to exit code 2, everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NoConvergence(_) | Error::RankDeficient)
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
