//! GAE surrogate bound and KL trust-region policy improvement.
//!
//! For two policies `pi` (candidate) and `pi'` (reference) the performance gap
//! `J(pi) - J(pi')` is bounded below by
//!
//! ```text
//! 1/(1-gt) E_{s~d_lambda(pi'), a~pi}[ A_gae(s,a) - C eps_V D_tv(pi,pi')[s] ]
//! C = 2 gt (gamma lambda (|S|-1) + 1) / ((1-gt)(1-gamma lambda))
//! ```
//!
//! where `A_gae` is the exponentially weighted sum of expected TD errors of
//! `V_{pi'}` along trajectories of `pi`, and `eps_V` is the largest expected
//! absolute TD error of `V_{pi'}` under `pi`. Replacing the TV term by
//! `sqrt(E[KL]/2)` yields the trust-region problem solved by
//! [`trust_region_step`]: maximize `E_{d_lambda(pi_k), pi}[A_gae]` subject to
//! `E_{d_lambda(pi_k)}[KL(pi, pi_k)] <= radius`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_unit_interval, Error, Result};
use crate::lambda::LambdaModel;
use crate::mdp::{induce, MdpFile, MdpModel, PolicyTable};
use crate::numeric::solve_resolvent;
use crate::objectives::objective_standard;
use crate::value::evaluate_exact;

/// Temperature bracket searched by the trust-region bisection.
pub const BETA_MIN: f64 = 1e-8;
pub const BETA_MAX: f64 = 1e8;

/// Tabular generalized advantage estimate, computed in expectation.
///
/// `A(s,a) = sum_l (gamma lambda)^l E[delta_{t+l} | s_t = s, a_t = a]` where
/// `delta_t = r_{t+1} + gamma v(s_{t+1}) - v(s_t)` and actions after `a_t` are
/// drawn from `rollout`. With `v = V_rollout` every later term vanishes and the
/// estimate equals the advantage of `rollout`.
pub fn exact_gae(
    model: &MdpModel,
    rollout: &PolicyTable,
    v_estimate: &DVector<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_unit_interval("lambda", lambda)?;
    model.check_vector("value estimate", v_estimate)?;
    let dynamics = induce(model, rollout)?;
    let gamma = model.gamma();
    let decay = gamma * lambda;

    let next_v = model.expected_next(v_estimate);
    let one_step = DMatrix::from_fn(model.num_states(), model.num_actions(), |s, a| {
        dynamics.r_sa[(s, a)] + gamma * next_v[(s, a)] - v_estimate[s]
    });
    if decay == 0.0 {
        return Ok(one_step);
    }
    // expected TD error per state under the rollout policy, accumulated over the horizon
    let per_state = DVector::from_fn(model.num_states(), |s, _| {
        (0..model.num_actions())
            .map(|a| rollout.prob(s, a) * one_step[(s, a)])
            .sum::<f64>()
    });
    let tail = solve_resolvent(&dynamics.p_pi, decay, &per_state, "GAE tail")?;
    Ok(one_step + model.expected_next(&tail) * decay)
}

fn check_pair(p: &PolicyTable, q: &PolicyTable, s: usize) -> Result<()> {
    if p.probs().shape() != q.probs().shape() {
        return Err(Error::DimensionMismatch {
            what: "policy pair actions",
            expected: p.num_actions(),
            actual: q.num_actions(),
        });
    }
    if s >= p.num_states() {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("state {s} out of range"),
        });
    }
    Ok(())
}

fn tv_row(p: &PolicyTable, q: &PolicyTable, s: usize) -> f64 {
    0.5 * (0..p.num_actions()).map(|a| (p.prob(s, a) - q.prob(s, a)).abs()).sum::<f64>()
}

fn kl_row(p: &PolicyTable, q: &PolicyTable, s: usize) -> f64 {
    let mut kl = 0.0;
    for a in 0..p.num_actions() {
        let (pa, qa) = (p.prob(s, a), q.prob(s, a));
        if pa == 0.0 {
            continue;
        }
        if qa == 0.0 {
            return f64::INFINITY;
        }
        kl += pa * (pa / qa).ln();
    }
    kl.max(0.0)
}

/// `1/2 sum_a |p(a|s) - q(a|s)|`
pub fn tv_distance(p: &PolicyTable, q: &PolicyTable, s: usize) -> Result<f64> {
    check_pair(p, q, s)?;
    Ok(tv_row(p, q, s))
}

/// `KL(p(.|s) || q(.|s))`, `+inf` when `p` has mass outside the support of `q`.
pub fn kl_divergence(p: &PolicyTable, q: &PolicyTable, s: usize) -> Result<f64> {
    check_pair(p, q, s)?;
    Ok(kl_row(p, q, s))
}

/// `max_s E_{a~pi, s'~P}[ |r(s'|s,a) + gamma V_{pi'}(s') - V_{pi'}(s)| ]`
///
/// In a stationary MDP the per-step quantity does not depend on the step, so
/// the supremum over steps is this maximum over states.
pub fn epsilon_v(model: &MdpModel, pi: &PolicyTable, pi_prime: &PolicyTable) -> Result<f64> {
    model.check_policy(pi)?;
    let v = evaluate_exact(&induce(model, pi_prime)?, model.gamma())?;
    Ok(epsilon_with_value(model, pi, &v))
}

fn epsilon_with_value(model: &MdpModel, pi: &PolicyTable, v: &DVector<f64>) -> f64 {
    let gamma = model.gamma();
    (0..model.num_states())
        .map(|s| {
            (0..model.num_actions())
                .map(|a| {
                    let spread: f64 = model
                        .transition_row(s, a)
                        .iter()
                        .zip(model.reward_row(s, a))
                        .enumerate()
                        .map(|(k, (p, r))| p * (r + gamma * v[k] - v[s]).abs())
                        .sum();
                    pi.prob(s, a) * spread
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Terms of the GAE surrogate lower bound on `J(pi) - J(pi')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurrogateReport {
    pub lambda: f64,
    pub gamma_tilde: f64,
    /// `1/(1-gt) E_{s~d_lambda(pi'), a~pi}[A_gae(s,a)]`
    pub gae_term: f64,
    /// `E_{s~d_lambda(pi')}[D_tv(pi, pi')[s]]`
    pub tv_expectation: f64,
    /// The coefficient `C eps_V` multiplying the TV term inside the expectation.
    pub penalty_coefficient: f64,
    /// `1/(1-gt) C eps_V E[D_tv]`
    pub penalty_term: f64,
    pub lower_bound: f64,
    /// `J(pi) - J(pi')`
    pub true_gap: f64,
    pub epsilon_v: f64,
}

impl SurrogateReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.true_gap >= self.lower_bound - slack
    }
}

pub fn surrogate_bound(
    model: &MdpModel,
    pi: &PolicyTable,
    pi_prime: &PolicyTable,
    lambda: f64,
) -> Result<SurrogateReport> {
    check_unit_interval("lambda", lambda)?;
    model.check_policy(pi)?;
    let gamma = model.gamma();
    let ref_dynamics = induce(model, pi_prime)?;
    let v_ref = evaluate_exact(&ref_dynamics, gamma)?;
    let lm = LambdaModel::from_dynamics(&ref_dynamics, gamma, model.rho0(), lambda)?;
    let gt = lm.gamma_tilde;
    let d = &lm.d_lambda;

    let gae = exact_gae(model, pi, &v_ref, lambda)?;
    let expected_gae: f64 = (0..model.num_states())
        .map(|s| d[s] * (0..model.num_actions()).map(|a| pi.prob(s, a) * gae[(s, a)]).sum::<f64>())
        .sum();
    let tv_expectation: f64 = (0..model.num_states()).map(|s| d[s] * tv_row(pi, pi_prime, s)).sum();
    let eps = epsilon_with_value(model, pi, &v_ref);
    let gl = gamma * lambda;
    let num_states = model.num_states() as f64;
    let penalty_coefficient = 2.0 * gt * (gl * (num_states - 1.0) + 1.0) * eps / ((1.0 - gt) * (1.0 - gl));

    let gae_term = expected_gae / (1.0 - gt);
    let penalty_term = penalty_coefficient * tv_expectation / (1.0 - gt);
    let true_gap = objective_standard(model, pi)?.value_form - model.rho0().dot(&v_ref);
    Ok(SurrogateReport {
        lambda,
        gamma_tilde: gt,
        gae_term,
        tv_expectation,
        penalty_coefficient,
        penalty_term,
        lower_bound: gae_term - penalty_term,
        true_gap,
        epsilon_v: eps,
    })
}

/// `E[D_tv] <= E[sqrt(KL/2)] <= sqrt(E[KL]/2)` under `d_lambda(pi')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PinskerChain {
    pub tv_expect: f64,
    pub pointwise_pinsker: f64,
    pub jensen: f64,
}

impl PinskerChain {
    /// Whether the ordering holds up to `slack`; vacuous when KL is infinite.
    pub fn holds(&self, slack: f64) -> bool {
        if !self.jensen.is_finite() {
            return true;
        }
        self.tv_expect <= self.pointwise_pinsker + slack && self.pointwise_pinsker <= self.jensen + slack
    }
}

pub fn pinsker_chain(
    model: &MdpModel,
    pi: &PolicyTable,
    pi_prime: &PolicyTable,
    lambda: f64,
) -> Result<PinskerChain> {
    model.check_policy(pi)?;
    let ref_dynamics = induce(model, pi_prime)?;
    let lm = LambdaModel::from_dynamics(&ref_dynamics, model.gamma(), model.rho0(), lambda)?;
    let d = &lm.d_lambda;
    let (mut tv, mut root_kl, mut kl) = (0.0, 0.0, 0.0);
    for s in 0..model.num_states() {
        if d[s] == 0.0 {
            continue;
        }
        let k = kl_row(pi, pi_prime, s);
        tv += d[s] * tv_row(pi, pi_prime, s);
        root_kl += d[s] * (k / 2.0).sqrt();
        kl += d[s] * k;
    }
    Ok(PinskerChain {
        tv_expect: tv,
        pointwise_pinsker: root_kl,
        jensen: (kl / 2.0).sqrt(),
    })
}

/// Which KL divergence the trust region constrains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(pi || pi_k)`: the exponentiated update `pi ∝ pi_k exp(A / beta)`.
    #[default]
    CandidateToCurrent,
    /// `KL(pi_k || pi)`: per-state update `pi = beta pi_k / (mu_s - A)`.
    CurrentToCandidate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrustRegionConfig {
    /// KL budget.
    pub radius: f64,
    pub lambda: f64,
    pub max_bisection_iters: usize,
    /// Accepted `|E[KL] - radius|` when the constraint is active.
    pub bisection_tol: f64,
    pub direction: KlDirection,
}

impl TrustRegionConfig {
    pub fn new(radius: f64, lambda: f64) -> Self {
        Self {
            radius,
            lambda,
            max_bisection_iters: 200,
            bisection_tol: 1e-10 * radius.max(1.0),
            direction: KlDirection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::InvalidParameter {
                name: "radius",
                reason: format!("{} is not positive", self.radius),
            });
        }
        check_unit_interval("lambda", self.lambda)?;
        if !(self.bisection_tol > 0.0) || self.max_bisection_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "bisection",
                reason: "tolerance and iteration budget must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustRegionStep {
    pub policy: PolicyTable,
    /// Temperature of the update; `None` when the current policy is returned.
    pub beta: Option<f64>,
    /// Weighted KL of the returned policy.
    pub kl: f64,
    /// `E_{s~weights, a~pi}[A(s,a)]` of the returned policy.
    pub surrogate: f64,
}

/// Tilts `current` toward higher advantages at temperature `beta`.
fn tilt(current: &PolicyTable, adv: &DMatrix<f64>, beta: f64, direction: KlDirection) -> DMatrix<f64> {
    let (ns, na) = (current.num_states(), current.num_actions());
    let mut out = DMatrix::zeros(ns, na);
    for s in 0..ns {
        let support = (0..na).filter(|&a| current.prob(s, a) > 0.0);
        let top = support.clone().map(|a| adv[(s, a)]).fold(f64::NEG_INFINITY, f64::max);
        match direction {
            KlDirection::CandidateToCurrent => {
                for a in support {
                    out[(s, a)] = current.prob(s, a) * ((adv[(s, a)] - top) / beta).exp();
                }
            }
            KlDirection::CurrentToCandidate => {
                // sum_a beta pi_k(a) / (x + top - A(a)) = 1 for x = mu - top in [beta m, beta]
                let top_mass: f64 = support.clone().filter(|&a| adv[(s, a)] == top).map(|a| current.prob(s, a)).sum();
                let mass = |x: f64| -> f64 {
                    (0..na)
                        .filter(|&a| current.prob(s, a) > 0.0)
                        .map(|a| beta * current.prob(s, a) / (x + top - adv[(s, a)]))
                        .sum()
                };
                let (mut lo, mut hi) = (beta * top_mass, beta);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if mass(mid) > 1.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                for a in support {
                    out[(s, a)] = beta * current.prob(s, a) / (hi + top - adv[(s, a)]);
                }
            }
        }
        let total: f64 = out.row(s).sum();
        out.row_mut(s).iter_mut().for_each(|x| *x /= total);
    }
    out
}

fn divergence(candidate: &PolicyTable, current: &PolicyTable, s: usize, direction: KlDirection) -> f64 {
    match direction {
        KlDirection::CandidateToCurrent => kl_row(candidate, current, s),
        KlDirection::CurrentToCandidate => kl_row(current, candidate, s),
    }
}

fn weighted_kl(weights: &DVector<f64>, candidate: &PolicyTable, current: &PolicyTable, direction: KlDirection) -> f64 {
    (0..weights.len())
        .filter(|&s| weights[s] > 0.0)
        .map(|s| weights[s] * divergence(candidate, current, s, direction))
        .sum()
}

fn weighted_surrogate(weights: &DVector<f64>, policy: &PolicyTable, adv: &DMatrix<f64>) -> f64 {
    (0..weights.len())
        .map(|s| weights[s] * (0..adv.ncols()).map(|a| policy.prob(s, a) * adv[(s, a)]).sum::<f64>())
        .sum()
}

/// Solves the trust-region problem for a fixed state weighting and advantage table.
pub fn trust_region_update(
    weights: &DVector<f64>,
    current: &PolicyTable,
    adv: &DMatrix<f64>,
    cfg: &TrustRegionConfig,
) -> Result<TrustRegionStep> {
    cfg.validate()?;
    if weights.len() != current.num_states() || adv.shape() != current.probs().shape() {
        return Err(Error::DimensionMismatch {
            what: "trust-region inputs",
            expected: current.num_states(),
            actual: weights.len(),
        });
    }
    let unchanged = || TrustRegionStep {
        policy: current.clone(),
        beta: None,
        kl: 0.0,
        surrogate: weighted_surrogate(weights, current, adv),
    };
    let flat = (0..current.num_states()).filter(|&s| weights[s] > 0.0).all(|s| {
        let mut on_support = (0..current.num_actions())
            .filter(|&a| current.prob(s, a) > 0.0)
            .map(|a| adv[(s, a)]);
        let first = on_support.next().unwrap_or(0.0);
        on_support.all(|x| x == first)
    });
    if flat {
        return Ok(unchanged());
    }

    let at = |beta: f64| -> (PolicyTable, f64) {
        let policy = PolicyTable::from_matrix_unchecked(tilt(current, adv, beta, cfg.direction));
        let kl = weighted_kl(weights, &policy, current, cfg.direction);
        (policy, kl)
    };
    let finish = |policy: PolicyTable, beta: f64, kl: f64| TrustRegionStep {
        surrogate: weighted_surrogate(weights, &policy, adv),
        policy,
        beta: Some(beta),
        kl,
    };

    let (greedy, greedy_kl) = at(BETA_MIN);
    if greedy_kl <= cfg.radius {
        return Ok(finish(greedy, BETA_MIN, greedy_kl));
    }
    let (mut lo, mut hi) = (BETA_MIN.ln(), BETA_MAX.ln());
    let (cautious, cautious_kl) = at(BETA_MAX);
    if cautious_kl > cfg.radius {
        return Err(Error::Bisection {
            iterations: 0,
            low: BETA_MIN,
            high: BETA_MAX,
            kl: cautious_kl,
            radius: cfg.radius,
        });
    }
    let mut best = (cautious, BETA_MAX, cautious_kl);
    for _ in 0..cfg.max_bisection_iters {
        let mid = 0.5 * (lo + hi);
        let beta = mid.exp();
        let (policy, kl) = at(beta);
        if (kl - cfg.radius).abs() <= cfg.bisection_tol {
            return Ok(finish(policy, beta, kl));
        }
        if kl > cfg.radius {
            lo = mid;
        } else {
            hi = mid;
            best = (policy, beta, kl);
        }
    }
    Err(Error::Bisection {
        iterations: cfg.max_bisection_iters,
        low: lo.exp(),
        high: hi.exp(),
        kl: best.2,
        radius: cfg.radius,
    })
}

/// One KL trust-region improvement of `current`, using `A_gae` computed with
/// the exact `V_{pi_k}` and states weighted by `d_lambda(pi_k)`.
pub fn trust_region_step(model: &MdpModel, current: &PolicyTable, cfg: &TrustRegionConfig) -> Result<TrustRegionStep> {
    cfg.validate()?;
    let dynamics = induce(model, current)?;
    let v = evaluate_exact(&dynamics, model.gamma())?;
    let adv = exact_gae(model, current, &v, cfg.lambda)?;
    let lm = LambdaModel::from_dynamics(&dynamics, model.gamma(), model.rho0(), cfg.lambda)?;
    trust_region_update(&lm.d_lambda, current, &adv, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationRecord {
    pub step: usize,
    pub policy: PolicyTable,
    /// Exact `J` of `policy`.
    pub objective: f64,
    pub kl: f64,
}

/// Runs `num_steps` trust-region steps from `initial`.
pub fn optimize(
    model: &MdpModel,
    initial: &PolicyTable,
    cfg: &TrustRegionConfig,
    num_steps: usize,
) -> Result<Vec<OptimizationRecord>> {
    if num_steps == 0 {
        return Err(Error::InvalidParameter {
            name: "num_steps",
            reason: "must be at least 1".into(),
        });
    }
    let mut current = initial.clone();
    let mut records = Vec::with_capacity(num_steps);
    for step in 1..=num_steps {
        let out = trust_region_step(model, &current, cfg)?;
        current = out.policy;
        records.push(OptimizationRecord {
            step,
            policy: current.clone(),
            objective: objective_standard(model, &current)?.value_form,
            kl: out.kl,
        });
    }
    Ok(records)
}

/// A violated surrogate bound, with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub model: MdpFile,
    pub pi: PolicyTable,
    pub pi_prime: PolicyTable,
    pub lambda: f64,
    pub report: SurrogateReport,
}

impl Counterexample {
    pub fn new(model: &MdpModel, pi: &PolicyTable, pi_prime: &PolicyTable, report: SurrogateReport) -> Self {
        Self {
            model: model.to_file(),
            pi: pi.clone(),
            pi_prime: pi_prime.clone(),
            lambda: report.lambda,
            report,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("counterexample fields are plain data")
    }
}
