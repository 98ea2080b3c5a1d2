//! Monte Carlo simulation of the policy-induced chain.
//!
//! Trajectory `i` of a batch draws from its own ChaCha8 stream `(seed, i)`, so
//! batches are reproducible regardless of how rayon schedules the work.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_unit_interval, Error, Result};
use crate::mdp::{MdpModel, PolicyTable};
use crate::numeric::pairwise_sum;
use crate::objectives::PhiFunction;

/// The RNG stream owned by item `index` of a seeded batch.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A sampled path `s_0, a_0, r_1, s_1, ..., s_T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `G_t = r_{t+1} + gamma G_{t+1}`, with `G_{T-1} = r_T`.
    #[serde(skip)]
    pub returns_to_go: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Optional overrides for the first state and first action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleStart {
    pub state: Option<usize>,
    pub first_action: Option<usize>,
}

/// Inverse-CDF sampler over a finite support.
#[derive(Debug, Clone)]
struct Categorical {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    fn new(probs: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let mut last_positive = 0;
        let cdf = probs
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                if p > 0.0 {
                    last_positive = i;
                }
                acc += p;
                acc
            })
            .collect();
        Self { cdf, last_positive }
    }

    fn sample(&self, u: f64) -> usize {
        // u < cdf[i] never selects a zero-probability index
        self.cdf
            .iter()
            .position(|&c| u < c)
            .map_or(self.last_positive, |i| i.min(self.last_positive))
    }
}

struct Tables {
    initial: Categorical,
    policy: Vec<Categorical>,
    transition: Vec<Categorical>,
}

impl Tables {
    fn new(model: &MdpModel, policy: &PolicyTable) -> Self {
        let (ns, na) = (model.num_states(), model.num_actions());
        Self {
            initial: Categorical::new(model.rho0().iter().copied()),
            policy: (0..ns)
                .map(|s| Categorical::new((0..na).map(|a| policy.prob(s, a))))
                .collect(),
            transition: (0..ns)
                .flat_map(|s| (0..na).map(move |a| (s, a)))
                .map(|(s, a)| Categorical::new(model.transition_row(s, a).iter().copied()))
                .collect(),
        }
    }
}

/// Runs one episode, reporting each step `(s, a, r, s')` to `visit`.
fn walk(
    model: &MdpModel,
    tables: &Tables,
    start: &SampleStart,
    horizon: usize,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(usize, usize, f64, usize),
) {
    let na = model.num_actions();
    let mut s = match start.state {
        Some(s) => s,
        None => tables.initial.sample(rng.random()),
    };
    for t in 0..horizon {
        let a = match (t, start.first_action) {
            (0, Some(a)) => a,
            _ => tables.policy[s].sample(rng.random()),
        };
        let next = tables.transition[s * na + a].sample(rng.random());
        visit(s, a, model.reward(s, a, next), next);
        s = next;
    }
}

fn sample_one(
    model: &MdpModel,
    tables: &Tables,
    start: &SampleStart,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    walk(model, tables, start, horizon, rng, |s, a, r, next| {
        if states.is_empty() {
            states.push(s);
        }
        actions.push(a);
        rewards.push(r);
        states.push(next);
    });
    let returns_to_go = returns_to_go(&rewards, model.gamma());
    Trajectory {
        states,
        actions,
        rewards,
        returns_to_go,
    }
}

fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        g = r + gamma * g;
        out[t] = g;
    }
    out
}

fn check_counts(horizon: usize, count: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidParameter {
            name: "horizon",
            reason: "must be at least 1".into(),
        });
    }
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "count",
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

fn check_start(model: &MdpModel, start: &SampleStart) -> Result<()> {
    if let Some(s) = start.state.filter(|&s| s >= model.num_states()) {
        return Err(Error::InvalidParameter {
            name: "start.state",
            reason: format!("state {s} out of range"),
        });
    }
    if let Some(a) = start.first_action.filter(|&a| a >= model.num_actions()) {
        return Err(Error::InvalidParameter {
            name: "start.first_action",
            reason: format!("action {a} out of range"),
        });
    }
    Ok(())
}

/// `count` trajectories of `horizon` steps with `s_0 ~ rho0`.
pub fn sample_trajectories(
    model: &MdpModel,
    policy: &PolicyTable,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    sample_trajectories_from(model, policy, &SampleStart::default(), horizon, count, seed)
}

/// Like [`sample_trajectories`], optionally pinning `s_0` and `a_0`.
pub fn sample_trajectories_from(
    model: &MdpModel,
    policy: &PolicyTable,
    start: &SampleStart,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    model.check_policy(policy)?;
    check_counts(horizon, count)?;
    check_start(model, start)?;
    let tables = Tables::new(model, policy);
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            sample_one(model, &tables, start, horizon, &mut rng)
        })
        .collect())
}

/// Discounted returns of the same episodes [`sample_trajectories`] would draw,
/// without keeping the paths.
pub fn sample_returns(
    model: &MdpModel,
    policy: &PolicyTable,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    model.check_policy(policy)?;
    check_counts(horizon, count)?;
    let tables = Tables::new(model, policy);
    let gamma = model.gamma();
    let start = SampleStart::default();
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let (mut total, mut discount) = (0.0, 1.0);
            walk(model, &tables, &start, horizon, &mut rng, |_, _, r, _| {
                total += discount * r;
                discount *= gamma;
            });
            total
        })
        .collect())
}

/// [`empirical_occupancy`] of the episodes [`sample_trajectories`] would draw,
/// accumulated without keeping the paths.
pub fn sample_occupancy(
    model: &MdpModel,
    policy: &PolicyTable,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<DVector<f64>> {
    model.check_policy(policy)?;
    check_counts(horizon, count)?;
    let tables = Tables::new(model, policy);
    let (gamma, ns) = (model.gamma(), model.num_states());
    let start = SampleStart::default();
    let per_episode: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut w = vec![0.0; ns];
            let mut weight = 1.0 - gamma;
            let mut first = true;
            walk(model, &tables, &start, horizon, &mut rng, |s, _, _, next| {
                if first {
                    w[s] += weight;
                    first = false;
                }
                weight *= gamma;
                w[next] += weight;
            });
            w
        })
        .collect();
    let mut column = Vec::with_capacity(count);
    let mut out = DVector::zeros(ns);
    for s in 0..ns {
        column.clear();
        column.extend(per_episode.iter().map(|w| w[s]));
        out[s] = pairwise_sum(&column);
    }
    let total = out.sum();
    Ok(out / total)
}

/// Discounted return `sum_t gamma^t r_{t+1}` of one trajectory.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    let (mut total, mut discount) = (0.0, 1.0);
    for r in &traj.rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
}

/// Sample mean of discounted returns and its standard error.
pub fn monte_carlo_objective(trajectories: &[Trajectory], gamma: f64) -> Result<McEstimate> {
    if trajectories.is_empty() {
        return Err(Error::InvalidParameter {
            name: "trajectories",
            reason: "empty batch".into(),
        });
    }
    let returns: Vec<f64> = trajectories.iter().map(|t| discounted_return(t, gamma)).collect();
    Ok(mean_and_standard_error(&returns))
}

/// Mean and `std / sqrt(n)` with the unbiased sample variance.
pub fn mean_and_standard_error(xs: &[f64]) -> McEstimate {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let squares: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let variance = if xs.len() > 1 {
        pairwise_sum(&squares) / (n - 1.0)
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        standard_error: (variance / n).sqrt(),
    }
}

/// Smallest horizon `T` with `gamma^T r_max / (1 - gamma) <= tol`.
pub fn truncation_horizon(gamma: f64, reward_bound: f64, tol: f64) -> usize {
    if reward_bound <= 0.0 {
        return 1;
    }
    let t = (tol * (1.0 - gamma) / reward_bound).ln() / gamma.ln();
    (t.ceil().max(1.0)) as usize
}

/// Bias bound from dropping every reward after step `horizon`.
pub fn truncation_bound(gamma: f64, reward_bound: f64, horizon: usize) -> f64 {
    gamma.powi(horizon as i32) * reward_bound / (1.0 - gamma)
}

fn check_states(traj: &Trajectory, num_states: usize) -> Result<()> {
    match traj.states.iter().find(|&&s| s >= num_states) {
        Some(&s) => Err(Error::DimensionMismatch {
            what: "trajectory state index vs. baseline length",
            expected: num_states,
            actual: s + 1,
        }),
        None => Ok(()),
    }
}

/// `delta_t = r_{t+1} + gamma phi(s_{t+1}) - phi(s_t)` along the trajectory.
pub fn td_errors(traj: &Trajectory, phi: &PhiFunction, gamma: f64) -> Result<Vec<f64>> {
    check_states(traj, phi.values.len())?;
    let v = &phi.values;
    Ok(traj
        .rewards
        .iter()
        .enumerate()
        .map(|(t, r)| r + gamma * v[traj.states[t + 1]] - v[traj.states[t]])
        .collect())
}

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}` by the backward recursion
/// `A_t = delta_t + gamma lambda A_{t+1}`.
pub fn gae_from_trajectory(
    traj: &Trajectory,
    v_estimate: &DVector<f64>,
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_unit_interval("lambda", lambda)?;
    let phi = PhiFunction::new(v_estimate.clone())?;
    let mut out = td_errors(traj, &phi, gamma)?;
    let decay = gamma * lambda;
    let mut acc = 0.0;
    for x in out.iter_mut().rev() {
        acc = *x + decay * acc;
        *x = acc;
    }
    Ok(out)
}

/// Visited states weighted by `(1-gamma) gamma^t`, normalized over the batch.
pub fn empirical_occupancy(trajectories: &[Trajectory], gamma: f64, num_states: usize) -> DVector<f64> {
    let mut w = DVector::zeros(num_states);
    for traj in trajectories {
        let mut weight = 1.0 - gamma;
        for &s in &traj.states {
            w[s] += weight;
            weight *= gamma;
        }
    }
    let total = w.sum();
    if total > 0.0 {
        w / total
    } else {
        w
    }
}
