use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("design matrix is numerically singular (cond = {cond:.3e})")]
    SingularDesign { cond: f64 },

    #[error("covariance matrix is singular even after ridge conditioning")]
    SingularCovariance,

    #[error("tangency denominator 1'S^-1 mu = {0:.3e} is degenerate")]
    DegenerateDenominator(f64),

    #[error("all weights are zero")]
    AllZeroWeights,

    #[error("portfolio value {0:.3e} too close to zero to re-express drifted weights")]
    DegeneratePortfolioValue(f64),

    #[error("transaction cost {0} consumes all capital")]
    CostExceedsCapital(f64),

    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("insufficient history: need {needed} observations, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("forecast file has no rows for factor {factor} at target period {period}")]
    MissingFactor { factor: usize, period: i64 },

    #[error("{path}:{line}: malformed row: {msg}")]
    MalformedRow { path: PathBuf, line: usize, msg: String },

    #[error("{path}:{line}: {field}: {msg}")]
    Config { path: PathBuf, line: usize, field: String, msg: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::MalformedRow { path: path.into(), line, msg: msg.into() }
    }

    /// True for errors caused by bad user input (files, config, arguments)
    /// rather than a numerical failure during a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedRow { .. } | Error::Config { .. } | Error::Invalid(_) | Error::Io { .. } | Error::MissingFactor { .. }
        )
    }
}
