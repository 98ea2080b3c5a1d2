//! Multi-step transition matrices and discounted state distributions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_discount, Error, Result};
use crate::mdp::InducedDynamics;
use crate::numeric::{matrix_power, solve_resolvent};

/// Negative entries down to this magnitude are treated as solver round-off.
pub const NEGATIVE_MASS_TOL: f64 = 1e-12;

/// `P_pi^t`, the t-step kernel; `t = 0` gives the identity.
pub fn t_step_matrix(dynamics: &InducedDynamics, t: usize) -> DMatrix<f64> {
    matrix_power(&dynamics.p_pi, t)
}

/// Where the chain starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    State(usize),
    Distribution(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionSource {
    SingleStart(usize),
    InitialDistribution,
}

/// Normalized discounted state-visitation weights `(1-gamma) sum_t gamma^t P(s_t = . )`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedDistribution {
    pub weights: DVector<f64>,
    pub source: DistributionSource,
}

/// Solves `(I - gamma P_pi^T) d = (1 - gamma) start`.
pub fn discounted_distribution(
    dynamics: &InducedDynamics,
    gamma: f64,
    start: &Start,
) -> Result<DiscountedDistribution> {
    check_discount(gamma)?;
    let n = dynamics.p_pi.nrows();
    let (start_vec, source) = match start {
        Start::State(s0) => {
            if *s0 >= n {
                return Err(Error::InvalidParameter {
                    name: "start",
                    reason: format!("state {s0} out of range for {n} states"),
                });
            }
            (
                DVector::from_fn(n, |s, _| if s == *s0 { 1.0 } else { 0.0 }),
                DistributionSource::SingleStart(*s0),
            )
        }
        Start::Distribution(rho) => {
            if rho.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "start distribution",
                    expected: n,
                    actual: rho.len(),
                });
            }
            (rho.clone(), DistributionSource::InitialDistribution)
        }
    };
    let weights = occupancy(&dynamics.p_pi, gamma, &start_vec, "discounted state distribution")?;
    Ok(DiscountedDistribution { weights, source })
}

/// `(1 - discount) (I - discount K^T)^{-1} start` for a row-stochastic kernel `K`,
/// with round-off negatives clamped and the result renormalized.
pub(crate) fn occupancy(
    kernel: &DMatrix<f64>,
    discount: f64,
    start: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    let rhs = start * (1.0 - discount);
    let raw = solve_resolvent(&kernel.transpose(), discount, &rhs, what)?;
    clamp_and_normalize(raw)
}

fn clamp_and_normalize(mut w: DVector<f64>) -> Result<DVector<f64>> {
    for (state, x) in w.iter_mut().enumerate() {
        if *x < 0.0 {
            if *x < -NEGATIVE_MASS_TOL {
                return Err(Error::NegativeMass { state, value: *x });
            }
            *x = 0.0;
        }
    }
    let total = w.sum();
    Ok(w / total)
}
