use thiserror::Error;

use crate::mdp::ValidationReport;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidModel(ValidationReport),

    #[error("invalid policy: {0}")]
    InvalidPolicy(ValidationReport),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A linear system that is non-singular for every valid input failed to solve.
    #[error("internal error: singular system while computing {0}")]
    Singular(&'static str),

    #[error("distribution has a negative entry {value} at state {state}")]
    NegativeMass { state: usize, value: f64 },

    #[error("iterative evaluation did not converge in {iterations} iterations (last step {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("temperature bisection did not converge in {iterations} iterations; bracket [{low:e}, {high:e}], KL {kl} vs radius {radius}")]
    Bisection {
        iterations: usize,
        low: f64,
        high: f64,
        kl: f64,
        radius: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("{value} is outside [0, 1]"),
        })
    }
}

pub(crate) fn check_discount(value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("{value} is outside (0, 1)"),
        })
    }
}
