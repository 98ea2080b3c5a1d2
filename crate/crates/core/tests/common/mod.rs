#![allow(dead_code)]

use nalgebra::DVector;
use rlobj_core::generate::{random_instance, random_policy, InstanceShape};
use rlobj_core::sampler::stream_rng;
use rlobj_core::{MdpModel, PolicyTable};

/// One state, one action, reward 1, gamma 0.5.
pub fn m1() -> MdpModel {
    MdpModel::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 0.5).unwrap()
}

/// Deterministic two-state cycle: s0 -> s1 pays 1, s1 -> s0 pays 0.
pub fn m2(gamma: f64) -> MdpModel {
    MdpModel::new(
        2,
        1,
        vec![0.0, 1.0, 1.0, 0.0],
        vec![0.0, 1.0, 0.0, 0.0],
        vec![1.0, 0.0],
        gamma,
    )
    .unwrap()
}

pub fn single_action(ns: usize) -> PolicyTable {
    PolicyTable::uniform(ns, 1)
}

pub fn shape(max_states: usize, max_actions: usize) -> InstanceShape {
    InstanceShape {
        states: (2, max_states),
        actions: (2, max_actions),
    }
}

/// A random (model, policy) pair keyed by `seed`.
pub fn instance(seed: u64, shape: &InstanceShape) -> (MdpModel, PolicyTable) {
    let inst = random_instance(seed, 0, shape).unwrap();
    (inst.model, inst.policy)
}

/// A second random policy for the same model.
pub fn other_policy(seed: u64, model: &MdpModel) -> PolicyTable {
    let mut rng = stream_rng(seed ^ 0x9e37_79b9_7f4a_7c15, 1);
    random_policy(&mut rng, model.num_states(), model.num_actions())
}

/// Uniform random vector in `[lo, hi]`.
pub fn random_vector(seed: u64, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    use rand::Rng;
    let mut rng = stream_rng(seed, 2);
    DVector::from_fn(n, |_, _| rng.random_range(lo..=hi))
}

pub fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `P_pi` by explicit summation over actions.
pub fn p_pi_loop(model: &MdpModel, policy: &PolicyTable) -> Vec<Vec<f64>> {
    let ns = model.num_states();
    let mut out = vec![vec![0.0; ns]; ns];
    for (s, row) in out.iter_mut().enumerate() {
        for a in 0..model.num_actions() {
            for (n, x) in row.iter_mut().enumerate() {
                *x += policy.prob(s, a) * model.transition(s, a, n);
            }
        }
    }
    out
}

/// `V_pi` by value iteration to machine precision.
pub fn value_by_iteration(model: &MdpModel, policy: &PolicyTable) -> Vec<f64> {
    let ns = model.num_states();
    let p = p_pi_loop(model, policy);
    let r: Vec<f64> = (0..ns)
        .map(|s| {
            (0..model.num_actions())
                .map(|a| {
                    policy.prob(s, a)
                        * (0..ns)
                            .map(|n| model.transition(s, a, n) * model.reward(s, a, n))
                            .sum::<f64>()
                })
                .sum()
        })
        .collect();
    let mut v = vec![0.0; ns];
    for _ in 0..1_000_000 {
        let next: Vec<f64> = (0..ns)
            .map(|s| r[s] + model.gamma() * (0..ns).map(|n| p[s][n] * v[n]).sum::<f64>())
            .collect();
        let step = max_abs_diff(&next, &v);
        let scale = next.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        v = next;
        if step <= 4.0 * f64::EPSILON * scale {
            break;
        }
    }
    v
}

/// All deterministic policies, for small models.
pub fn deterministic_policies(ns: usize, na: usize) -> Vec<PolicyTable> {
    let count = na.pow(ns as u32);
    (0..count)
        .map(|mut code| {
            let actions: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = code % na;
                    code /= na;
                    a
                })
                .collect();
            PolicyTable::deterministic(&actions, na).unwrap()
        })
        .collect()
}
