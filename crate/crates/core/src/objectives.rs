//! The objective `J(pi)` in its standard, lambda-return and TD-error forms.
//!
//! All forms must agree. The standard form is evaluated both as `<rho0, V_pi>`
//! and through the discounted occupancy measure; the lambda form weights
//! `r_lambda` by `d_lambda`; the general form adds an arbitrary baseline `phi`
//! and sums expected TD errors `delta^phi_{pi,t}` as a truncated series, so it
//! shares no linear solve with the value route except `d_lambda`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lambda::LambdaModel;
use crate::mdp::{induce, InducedDynamics, MdpModel, PolicyTable};
use crate::transition::{discounted_distribution, t_step_matrix, Start};
use crate::value::evaluate_exact;

/// Default bound on the discarded tail of the TD-error series.
pub const DEFAULT_HORIZON_TOL: f64 = 1e-12;

/// A baseline function `phi: S -> R`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiFunction {
    pub values: DVector<f64>,
}

impl PhiFunction {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if let Some(s) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "phi",
                reason: format!("entry {s} is not finite"),
            });
        }
        Ok(Self { values })
    }

    pub fn zeros(num_states: usize) -> Self {
        Self {
            values: DVector::zeros(num_states),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StandardObjective {
    /// `sum_s rho0(s) V_pi(s)`
    pub value_form: f64,
    /// `1/(1-gamma) <d_pi^rho0, r_pi>`
    pub occupancy_form: f64,
}

pub fn objective_standard(model: &MdpModel, policy: &PolicyTable) -> Result<StandardObjective> {
    let dynamics = induce(model, policy)?;
    standard_from_dynamics(model, &dynamics)
}

fn standard_from_dynamics(model: &MdpModel, dynamics: &InducedDynamics) -> Result<StandardObjective> {
    let gamma = model.gamma();
    let v = evaluate_exact(dynamics, gamma)?;
    let d = discounted_distribution(dynamics, gamma, &Start::Distribution(model.rho0().clone()))?;
    Ok(StandardObjective {
        value_form: model.rho0().dot(&v),
        occupancy_form: d.weights.dot(&dynamics.r_pi) / (1.0 - gamma),
    })
}

/// Expected one-step TD error per state: `R_pi(s) + gamma (P_pi phi)(s) - phi(s)`.
pub fn expected_td_vector(dynamics: &InducedDynamics, gamma: f64, phi: &PhiFunction) -> DVector<f64> {
    &dynamics.r_pi + (&dynamics.p_pi * &phi.values) * gamma - &phi.values
}

/// `delta^phi_{pi,t}(s)`: the TD error at step `t` expected over the t-step kernel from `s`.
pub fn expected_td_term(
    model: &MdpModel,
    policy: &PolicyTable,
    phi: &PhiFunction,
    t: usize,
    s: usize,
) -> Result<f64> {
    model.check_vector("phi", &phi.values)?;
    if s >= model.num_states() {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("state {s} out of range"),
        });
    }
    let dynamics = induce(model, policy)?;
    let inner = expected_td_vector(&dynamics, model.gamma(), phi);
    Ok(t_step_matrix(&dynamics, t).row(s).transpose().dot(&inner))
}

/// Smallest `T` with `ratio^(T+1) * scale / (1 - ratio) <= tol`.
pub fn series_horizon(ratio: f64, scale: f64, tol: f64) -> usize {
    if ratio <= 0.0 || scale <= 0.0 {
        return 0;
    }
    let bound = tol * (1.0 - ratio) / scale;
    if bound >= 1.0 {
        return 0;
    }
    let t = (bound.ln() / ratio.ln()).ceil() - 1.0;
    t.max(0.0) as usize
}

/// `sum_{t=0..=horizon} (ratio P)^t g`
fn td_series(dynamics: &InducedDynamics, inner: &DVector<f64>, ratio: f64, horizon: usize) -> DVector<f64> {
    let mut term = inner.clone();
    let mut acc = term.clone();
    for _ in 0..horizon {
        term = (&dynamics.p_pi * &term) * ratio;
        acc += &term;
    }
    acc
}

/// Both sides of the pointwise identity underlying the TD-error form:
/// `r_lambda + gamma_tilde P_lambda phi - phi` (lhs) against the truncated
/// series `sum_t (gamma lambda)^t delta^phi_{pi,t}` (rhs).
#[derive(Debug, Clone, PartialEq)]
pub struct TdIdentity {
    pub lhs: DVector<f64>,
    pub rhs: DVector<f64>,
    pub horizon: usize,
}

pub fn td_identity(
    model: &MdpModel,
    policy: &PolicyTable,
    lambda: f64,
    phi: &PhiFunction,
    horizon_tol: f64,
) -> Result<TdIdentity> {
    model.check_vector("phi", &phi.values)?;
    let dynamics = induce(model, policy)?;
    let lm = LambdaModel::from_dynamics(&dynamics, model.gamma(), model.rho0(), lambda)?;
    let lhs = &lm.r_lambda + (&lm.p_lambda * &phi.values) * lm.gamma_tilde - &phi.values;
    let inner = expected_td_vector(&dynamics, model.gamma(), phi);
    let ratio = model.gamma() * lambda;
    let horizon = series_horizon(ratio, crate::numeric::sup_norm(&inner), horizon_tol);
    let rhs = td_series(&dynamics, &inner, ratio, horizon);
    Ok(TdIdentity { lhs, rhs, horizon })
}

fn check_horizon_tol(horizon_tol: f64) -> Result<()> {
    if horizon_tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "horizon_tol",
            reason: format!("{horizon_tol} is not positive"),
        })
    }
}

/// `E_rho0[phi] + 1/(1-gt) sum_{t<=T} (gamma lambda)^t <d_lambda, delta^phi_{pi,t}>`,
/// with `T` chosen so the discarded tail is below `horizon_tol`.
pub fn objective_general(
    model: &MdpModel,
    policy: &PolicyTable,
    lambda: f64,
    phi: &PhiFunction,
    horizon_tol: f64,
) -> Result<f64> {
    model.check_vector("phi", &phi.values)?;
    check_horizon_tol(horizon_tol)?;
    let dynamics = induce(model, policy)?;
    let lm = LambdaModel::from_dynamics(&dynamics, model.gamma(), model.rho0(), lambda)?;
    Ok(general_from_parts(model, &dynamics, &lm, phi, horizon_tol))
}

fn general_from_parts(
    model: &MdpModel,
    dynamics: &InducedDynamics,
    lm: &LambdaModel,
    phi: &PhiFunction,
    horizon_tol: f64,
) -> f64 {
    let scale = 1.0 / (1.0 - lm.gamma_tilde);
    let inner = expected_td_vector(dynamics, model.gamma(), phi);
    let ratio = model.gamma() * lm.lambda;
    let horizon = series_horizon(ratio, scale * crate::numeric::sup_norm(&inner), horizon_tol);
    let series = td_series(dynamics, &inner, ratio, horizon);
    model.rho0().dot(&phi.values) + scale * lm.d_lambda.dot(&series)
}

/// `1/(1-gamma_tilde) <d_lambda, r_lambda>`
pub fn objective_lambda(model: &MdpModel, policy: &PolicyTable, lambda: f64) -> Result<f64> {
    let lm = crate::lambda::build_lambda_model(model, policy, lambda)?;
    Ok(lambda_form(&lm))
}

fn lambda_form(lm: &LambdaModel) -> f64 {
    lm.d_lambda.dot(&lm.r_lambda) / (1.0 - lm.gamma_tilde)
}

/// The four objective values side by side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveReport {
    pub j_standard_value_form: f64,
    pub j_standard_occupancy_form: f64,
    pub j_lambda_form: f64,
    pub j_general_form: f64,
    pub max_pairwise_gap: f64,
}

impl ObjectiveReport {
    pub fn values(&self) -> [f64; 4] {
        [
            self.j_standard_value_form,
            self.j_standard_occupancy_form,
            self.j_lambda_form,
            self.j_general_form,
        ]
    }
}

fn max_pairwise_gap(values: &[f64]) -> f64 {
    let mut gap = 0.0_f64;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            gap = gap.max((a - b).abs());
        }
    }
    gap
}

pub fn equivalence_report(
    model: &MdpModel,
    policy: &PolicyTable,
    lambda: f64,
    phi: &PhiFunction,
) -> Result<ObjectiveReport> {
    model.check_vector("phi", &phi.values)?;
    let dynamics = induce(model, policy)?;
    let standard = standard_from_dynamics(model, &dynamics)?;
    let lm = LambdaModel::from_dynamics(&dynamics, model.gamma(), model.rho0(), lambda)?;
    let j_lambda_form = lambda_form(&lm);
    let j_general_form = general_from_parts(model, &dynamics, &lm, phi, DEFAULT_HORIZON_TOL);
    let values = [
        standard.value_form,
        standard.occupancy_form,
        j_lambda_form,
        j_general_form,
    ];
    Ok(ObjectiveReport {
        j_standard_value_form: standard.value_form,
        j_standard_occupancy_form: standard.occupancy_form,
        j_lambda_form,
        j_general_form,
        max_pairwise_gap: max_pairwise_gap(&values),
    })
}
