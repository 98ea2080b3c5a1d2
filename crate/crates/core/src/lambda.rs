//! The lambda-Bellman operator and the objects it induces.
//!
//! Mixing the powers of the Bellman operator with weights `(1-lambda) lambda^t`
//! gives an affine operator `v -> r_lambda + gamma_tilde P_lambda v` where
//!
//! ```text
//! gamma_tilde = gamma (1 - lambda) / (1 - gamma lambda)
//! P_lambda    = (1 - gamma lambda) (I - gamma lambda P_pi)^{-1} P_pi
//! r_lambda    = (I - gamma lambda P_pi)^{-1} r_pi
//! d_lambda    = (1 - gamma_tilde) (I - gamma_tilde P_lambda^T)^{-1} rho0
//! ```
//!
//! Every series is evaluated through a linear solve. `lambda = 1` is admitted:
//! `gamma_tilde` vanishes, `d_lambda` collapses to `rho0` and `r_lambda` to `V_pi`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_unit_interval, Result};
use crate::mdp::{induce, InducedDynamics, MdpModel, PolicyTable};
use crate::numeric::{solve_resolvent, solve_resolvent_matrix};
use crate::transition::occupancy;

/// `gamma (1 - lambda) / (1 - gamma lambda)`, always within `[0, gamma]`.
pub fn effective_discount(gamma: f64, lambda: f64) -> f64 {
    gamma * (1.0 - lambda) / (1.0 - gamma * lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaModel {
    pub lambda: f64,
    pub gamma_tilde: f64,
    pub p_lambda: DMatrix<f64>,
    pub r_lambda: DVector<f64>,
    /// lambda-discounted state distribution started from `rho0`.
    pub d_lambda: DVector<f64>,
}

impl LambdaModel {
    /// Builds the lambda objects from already-induced dynamics.
    pub fn from_dynamics(
        dynamics: &InducedDynamics,
        gamma: f64,
        rho0: &DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        crate::error::check_discount(gamma)?;
        check_unit_interval("lambda", lambda)?;
        let gl = gamma * lambda;
        let gamma_tilde = effective_discount(gamma, lambda);
        let p_lambda = solve_resolvent_matrix(&dynamics.p_pi, gl, &dynamics.p_pi, "lambda kernel")?
            * (1.0 - gl);
        let r_lambda = solve_resolvent(&dynamics.p_pi, gl, &dynamics.r_pi, "lambda reward")?;
        let d_lambda = occupancy(&p_lambda, gamma_tilde, rho0, "lambda state distribution")?;
        Ok(Self {
            lambda,
            gamma_tilde,
            p_lambda,
            r_lambda,
            d_lambda,
        })
    }

    /// Residual of `rho0 - d/(1-gt) + gt/(1-gt) P_lambda^T d = 0` in the sup norm.
    pub fn distribution_residual(&self, rho0: &DVector<f64>) -> f64 {
        let gt = self.gamma_tilde;
        let lhs = rho0 - &self.d_lambda / (1.0 - gt)
            + (self.p_lambda.transpose() * &self.d_lambda) * (gt / (1.0 - gt));
        crate::numeric::sup_norm(&lhs)
    }
}

pub fn build_lambda_model(model: &MdpModel, policy: &PolicyTable, lambda: f64) -> Result<LambdaModel> {
    let dynamics = induce(model, policy)?;
    LambdaModel::from_dynamics(&dynamics, model.gamma(), model.rho0(), lambda)
}

/// `r_lambda + gamma_tilde P_lambda v`
pub fn lambda_bellman_apply(lm: &LambdaModel, v: &DVector<f64>) -> DVector<f64> {
    &lm.r_lambda + (&lm.p_lambda * v) * lm.gamma_tilde
}
