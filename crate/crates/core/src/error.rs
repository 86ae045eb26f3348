use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected dimension {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("unstable step: scale * lambda_max = {0} exceeds 1")]
    Unstable(f64),

    #[error("kernel matrix is rank deficient (smallest eigenvalue {0:e})")]
    RankDeficient(f64),

    #[error("regime mismatch: {regime} regression needs {requirement}, got {rows} samples x {cols} features")]
    Regime {
        regime: &'static str,
        requirement: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("invalid network width {0}: symmetric initialization needs an even width >= 2")]
    Width(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("value {0} is outside the domain (0, 1]")]
    Domain(f64),

    #[error("training diverged at step {0} (non-finite loss)")]
    Divergence(usize),

    #[error("rate is undefined: no samples satisfy the denominator condition")]
    UndefinedRate,
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}
