use thiserror::Error;

/// Errors raised by the model-building and fitting routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A knot would land closer than the minimum separation to an existing one.
    #[error("knot {t} is within {min_separation:e} of an existing knot of variable {variable}")]
    Separation {
        variable: usize,
        t: f64,
        min_separation: f64,
    },

    /// A factorization or linear solve failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The constraint set admits no solution.
    #[error("infeasible constraints: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
