//! Policy evaluation through the Bellman equation.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_discount, Error, Result};
use crate::mdp::{InducedDynamics, MdpModel, PolicyTable};
use crate::numeric::{solve_resolvent, sup_norm};

/// `V_pi`, `Q_pi` and `A_pi` for one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueBundle {
    pub v: DVector<f64>,
    pub q: DMatrix<f64>,
    pub adv: DMatrix<f64>,
}

/// The Bellman operator `v -> r_pi + gamma P_pi v`.
pub fn bellman_apply(dynamics: &InducedDynamics, gamma: f64, v: &DVector<f64>) -> DVector<f64> {
    &dynamics.r_pi + (&dynamics.p_pi * v) * gamma
}

/// `v = (I - gamma P_pi)^{-1} r_pi`
pub fn evaluate_exact(dynamics: &InducedDynamics, gamma: f64) -> Result<DVector<f64>> {
    check_discount(gamma)?;
    solve_resolvent(&dynamics.p_pi, gamma, &dynamics.r_pi, "policy value")
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeEvaluation {
    pub v: DVector<f64>,
    pub iterations: usize,
}

/// Repeated application of the Bellman operator from `v = 0`.
///
/// Stops at the first iterate whose step satisfies
/// `|v_{k+1} - v_k|_inf <= tol (1 - gamma) / gamma`, which bounds the distance
/// to the fixed point by `tol`.
pub fn evaluate_iterative(
    dynamics: &InducedDynamics,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<IterativeEvaluation> {
    check_discount(gamma)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("{tol} is not positive"),
        });
    }
    let threshold = tol * (1.0 - gamma) / gamma;
    let mut v = DVector::zeros(dynamics.r_pi.len());
    let mut residual = f64::INFINITY;
    for k in 1..=max_iters {
        let next = bellman_apply(dynamics, gamma, &v);
        residual = sup_norm(&(&next - &v));
        v = next;
        if residual <= threshold {
            return Ok(IterativeEvaluation { v, iterations: k });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        residual,
        last: v.iter().copied().collect(),
    })
}

/// `Q(s,a) = R(s,a) + gamma sum_s' P(s'|s,a) v(s')` and `A = Q - v`, for a caller-supplied `v`.
pub fn q_and_advantage(model: &MdpModel, policy: &PolicyTable, v: &DVector<f64>) -> Result<ValueBundle> {
    model.check_policy(policy)?;
    model.check_vector("value vector", v)?;
    let q = model.expected_reward() + model.expected_next(v) * model.gamma();
    let adv = DMatrix::from_fn(q.nrows(), q.ncols(), |s, a| q[(s, a)] - v[s]);
    Ok(ValueBundle { v: v.clone(), q, adv })
}

/// Exact evaluation straight from a model and policy.
pub fn evaluate_policy(model: &MdpModel, policy: &PolicyTable) -> Result<ValueBundle> {
    let dynamics = crate::mdp::induce(model, policy)?;
    let v = evaluate_exact(&dynamics, model.gamma())?;
    q_and_advantage(model, policy, &v)
}
