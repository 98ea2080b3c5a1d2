mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rlobj_core::generate::random_model_with;
use rlobj_core::objectives::PhiFunction;
use rlobj_core::sampler::{
    gae_from_trajectory, mean_and_standard_error, monte_carlo_objective, sample_occupancy, sample_returns,
    sample_trajectories, sample_trajectories_from, stream_rng, td_errors, truncation_bound, truncation_horizon, SampleStart,
};
use rlobj_core::{discounted_distribution, evaluate_exact, exact_gae, induce, objective_standard, Start};

#[test]
fn single_state_trajectory() {
    let trajs = sample_trajectories(&m1(), &single_action(1), 5, 3, 0).unwrap();
    for t in &trajs {
        assert_eq!(t.states, vec![0; 6]);
        assert_eq!(t.rewards, vec![1.0; 5]);
        let g0: f64 = (0..5).map(|k| 0.5f64.powi(k)).sum();
        assert!((t.returns_to_go[0] - g0).abs() <= 1e-15);
    }
}

#[test]
fn cycle_trajectory() {
    let trajs = sample_trajectories(&m2(0.5), &single_action(2), 4, 1, 9).unwrap();
    assert_eq!(trajs[0].states, vec![0, 1, 0, 1, 0]);
    assert_eq!(trajs[0].rewards, vec![1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn same_seed_same_batch() {
    let (model, policy) = instance(1, &shape(10, 4));
    let a = sample_trajectories(&model, &policy, 50, 200, 17).unwrap();
    let b = sample_trajectories(&model, &policy, 50, 200, 17).unwrap();
    assert_eq!(a, b);
    let c = sample_trajectories(&model, &policy, 50, 200, 18).unwrap();
    assert_ne!(a, c);
}

#[test]
fn deterministic_models_have_exact_estimates() {
    for (model, ns, exact) in [(m1(), 1, 2.0), (m2(0.5), 2, 4.0 / 3.0)] {
        let horizon = truncation_horizon(0.5, 1.0, 1e-7);
        let trajs = sample_trajectories(&model, &single_action(ns), horizon, 10, 0).unwrap();
        let est = monte_carlo_objective(&trajs, 0.5).unwrap();
        assert!((est.estimate - exact).abs() <= 1e-6);
        assert_eq!(est.standard_error, 0.0);
    }
}

#[test]
fn monte_carlo_matches_exact_objective() {
    let mut within = 0;
    for rep in 0..20u64 {
        let (model, policy) = instance(1000 + rep, &shape(20, 5));
        let gamma = model.gamma();
        let horizon = truncation_horizon(gamma, model.reward_bound(), 1e-4);
        let est = mean_and_standard_error(&sample_returns(&model, &policy, horizon, 10_000, rep).unwrap());
        let exact = objective_standard(&model, &policy).unwrap().value_form;
        let tol = 3.0 * est.standard_error + truncation_bound(gamma, model.reward_bound(), horizon);
        within += usize::from((est.estimate - exact).abs() <= tol);
    }
    assert!(within >= 19, "{within} of 20 within tolerance");
}

#[test]
fn empirical_occupancy_converges() {
    let mut within = 0;
    let reps = 20u64;
    for rep in 0..reps {
        let (model, policy) = instance(2000 + rep, &shape(10, 5));
        let gamma = model.gamma();
        let d = induce(&model, &policy).unwrap();
        let exact = discounted_distribution(&d, gamma, &Start::Distribution(model.rho0().clone())).unwrap();
        // mass beyond the horizon is at most 1e-3, far below the 0.02 threshold
        let horizon = truncation_horizon(gamma, 1.0 - gamma, 1e-3);
        let emp = sample_occupancy(&model, &policy, horizon, 200_000, rep).unwrap();
        let tv = 0.5 * (emp - &exact.weights).abs().sum();
        within += usize::from(tv <= 0.02);
    }
    assert!(within as f64 >= 0.95 * reps as f64, "{within} of {reps}");
}

#[test]
fn td_error_examples() {
    let trajs = sample_trajectories(&m1(), &single_action(1), 6, 1, 0).unwrap();
    let exact = PhiFunction::new(DVector::from_element(1, 2.0)).unwrap();
    assert!(td_errors(&trajs[0], &exact, 0.5).unwrap().iter().all(|&x| x == 0.0));

    let (model, policy) = instance(4, &shape(6, 3));
    let trajs = sample_trajectories(&model, &policy, 30, 5, 1).unwrap();
    for t in &trajs {
        assert_eq!(td_errors(t, &PhiFunction::zeros(model.num_states()), model.gamma()).unwrap(), t.rewards);
    }

    let trajs = sample_trajectories(&m2(0.5), &single_action(2), 6, 1, 0).unwrap();
    let f = PhiFunction::new(DVector::from_vec(vec![1.0, 0.0])).unwrap();
    assert_eq!(td_errors(&trajs[0], &f, 0.5).unwrap(), vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.5]);
}

#[test]
fn baseline_shorter_than_state_space_is_rejected() {
    let (model, policy) = instance(4, &shape(6, 3));
    let trajs = sample_trajectories(&model, &policy, 30, 1, 1).unwrap();
    assert!(td_errors(&trajs[0], &PhiFunction::zeros(1), 0.9).is_err());
}

#[test]
fn gae_special_cases() {
    let (model, policy) = instance(8, &shape(8, 3));
    let v = random_vector(8, model.num_states(), -2.0, 2.0);
    let trajs = sample_trajectories(&model, &policy, 40, 5, 2).unwrap();
    for t in &trajs {
        let td = td_errors(t, &PhiFunction::new(v.clone()).unwrap(), model.gamma()).unwrap();
        assert_eq!(gae_from_trajectory(t, &v, model.gamma(), 0.0).unwrap(), td);
        // lambda = 1 telescopes to G_t - v(s_t) + gamma^{T-t} v(s_T)
        let full = gae_from_trajectory(t, &v, model.gamma(), 1.0).unwrap();
        let horizon = t.len();
        for k in 0..horizon {
            let tail = model.gamma().powi((horizon - k) as i32) * v[t.states[horizon]];
            let expected = t.returns_to_go[k] - v[t.states[k]] + tail;
            assert!((full[k] - expected).abs() <= 1e-12);
        }
    }

    let model = m2(0.5);
    let v = DVector::from_vec(vec![4.0 / 3.0, 2.0 / 3.0]);
    let trajs = sample_trajectories(&model, &single_action(2), 20, 1, 0).unwrap();
    for lambda in [0.0, 0.5, 1.0] {
        let out = gae_from_trajectory(&trajs[0], &v, 0.5, lambda).unwrap();
        assert!(out.iter().all(|x| x.abs() <= 1e-15));
    }
}

#[test]
fn exact_gae_matches_sampled_average() {
    let mut rng = stream_rng(77, 0);
    let (gamma, lambda) = (0.9, 0.9);
    let model = random_model_with(&mut rng, 3, 2, gamma).unwrap();
    let rollout = other_policy(77, &model);
    let v = evaluate_exact(&induce(&model, &rollout).unwrap(), gamma).unwrap() + random_vector(77, 3, -0.5, 0.5);
    let exact = exact_gae(&model, &rollout, &v, lambda).unwrap();
    let horizon = 150;
    for s in 0..3 {
        for a in 0..2 {
            let start = SampleStart {
                state: Some(s),
                first_action: Some(a),
            };
            let seed = (s * 2 + a) as u64;
            let trajs = sample_trajectories_from(&model, &rollout, &start, horizon, 50_000, seed).unwrap();
            let firsts: Vec<f64> = trajs
                .iter()
                .map(|t| gae_from_trajectory(t, &v, gamma, lambda).unwrap()[0])
                .collect();
            let est = mean_and_standard_error(&firsts);
            assert!(
                (est.estimate - exact[(s, a)]).abs() <= 3.0 * est.standard_error,
                "({s},{a}): {} vs {} (se {})",
                est.estimate,
                exact[(s, a)],
                est.standard_error
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn backward_recursion_equals_double_sum(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let (model, policy) = instance(seed, &shape(10, 4));
        let v = random_vector(seed, model.num_states(), -3.0, 3.0);
        let gamma = model.gamma();
        let trajs = sample_trajectories(&model, &policy, 60, 3, seed).unwrap();
        for t in &trajs {
            let td = td_errors(t, &PhiFunction::new(v.clone()).unwrap(), gamma).unwrap();
            let fast = gae_from_trajectory(t, &v, gamma, lambda).unwrap();
            for k in 0..td.len() {
                let direct: f64 = (k..td.len()).map(|l| (gamma * lambda).powi((l - k) as i32) * td[l]).sum();
                prop_assert!((fast[k] - direct).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sampled_actions_stay_in_support(seed in any::<u64>()) {
        let (model, _) = instance(seed, &shape(6, 4));
        let actions: Vec<usize> = (0..model.num_states()).map(|s| s % model.num_actions()).collect();
        let policy = rlobj_core::PolicyTable::deterministic(&actions, model.num_actions()).unwrap();
        for t in sample_trajectories(&model, &policy, 30, 4, seed).unwrap() {
            for (k, &a) in t.actions.iter().enumerate() {
                prop_assert_eq!(a, actions[t.states[k]]);
            }
        }
    }
}
