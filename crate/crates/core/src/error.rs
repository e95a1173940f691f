use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A named constraint of the allocation problem cannot be satisfied.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The relative local accuracy is too coarse for the condition number: the
    /// constant `C` of the round-count model is not positive.
    #[error("local accuracy theta={theta} is infeasible for condition number rho={rho} (C={c})")]
    InfeasibleAccuracy { theta: f64, rho: f64, c: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("training diverged at eta={eta}, theta={theta}")]
    Divergence { eta: f64, theta: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
