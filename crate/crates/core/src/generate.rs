//! Random MDP instances for the verification suites.
//!
//! Instance `i` of a suite with seed `k` is drawn from ChaCha8 stream `(k, i)`:
//! `|S|` uniform in the shape's state range, `|A|` in its action range, `gamma`
//! uniform over {0.5, 0.9, 0.99}, then `rho0`, every transition row and every
//! policy row from a flat Dirichlet (normalized unit exponentials), and
//! per-transition rewards uniform in `[-1, 1]`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::error::Result;
use crate::mdp::{MdpModel, PolicyTable};
use crate::sampler::stream_rng;

pub const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];

/// Inclusive size ranges for generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceShape {
    pub states: (usize, usize),
    pub actions: (usize, usize),
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self {
            states: (2, 20),
            actions: (2, 5),
        }
    }
}

pub fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

pub fn random_model(rng: &mut ChaCha8Rng, shape: &InstanceShape) -> Result<MdpModel> {
    let ns = rng.random_range(shape.states.0..=shape.states.1);
    let na = rng.random_range(shape.actions.0..=shape.actions.1);
    let gamma = GAMMAS[rng.random_range(0..GAMMAS.len())];
    random_model_with(rng, ns, na, gamma)
}

/// A model of fixed size and discount.
pub fn random_model_with(rng: &mut ChaCha8Rng, ns: usize, na: usize, gamma: f64) -> Result<MdpModel> {
    let rho0 = dirichlet_row(rng, ns);
    let transition: Vec<f64> = (0..ns * na).flat_map(|_| dirichlet_row(rng, ns)).collect();
    let reward: Vec<f64> = (0..ns * na * ns).map(|_| rng.random_range(-1.0..=1.0)).collect();
    MdpModel::new(ns, na, transition, reward, rho0, gamma)
}

pub fn random_policy(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> PolicyTable {
    let mut probs = DMatrix::zeros(ns, na);
    for s in 0..ns {
        for (a, p) in dirichlet_row(rng, na).into_iter().enumerate() {
            probs[(s, a)] = p;
        }
    }
    PolicyTable::from_matrix_unchecked(probs)
}

/// A reproducible (model, policy) pair together with the stream it was drawn from,
/// so callers can keep drawing instance-specific randomness.
pub struct Instance {
    pub index: usize,
    pub model: MdpModel,
    pub policy: PolicyTable,
    pub rng: ChaCha8Rng,
}

pub fn random_instance(seed: u64, index: usize, shape: &InstanceShape) -> Result<Instance> {
    let mut rng = stream_rng(seed, index as u64);
    let model = random_model(&mut rng, shape)?;
    let policy = random_policy(&mut rng, model.num_states(), model.num_actions());
    Ok(Instance {
        index,
        model,
        policy,
        rng,
    })
}
