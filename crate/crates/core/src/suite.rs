//! Randomized verification suites over generated instances.
//!
//! Instances run in parallel and results come back sorted by instance index,
//! so a suite's output depends only on its seed and size.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::generate::{random_instance, random_policy, InstanceShape};
use crate::mdp::induce;
use crate::objectives::{equivalence_report, ObjectiveReport, PhiFunction};
use crate::optimization::{pinsker_chain, surrogate_bound, Counterexample, PinskerChain, SurrogateReport};
use crate::value::evaluate_exact;

pub const LAMBDAS: [f64; 5] = [0.0, 0.3, 0.7, 0.95, 1.0];

/// Tolerance applied when the baseline is the exact value function.
pub const EXACT_BASELINE_TOL: f64 = 1e-9;

/// Slack on the surrogate lower bound.
pub const BOUND_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    Zero,
    Value,
    NoisyValue,
    Random,
}

pub const PHI_KINDS: [PhiKind; 4] = [PhiKind::Zero, PhiKind::Value, PhiKind::NoisyValue, PhiKind::Random];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyCase {
    pub index: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub phi: PhiKind,
    pub report: ObjectiveReport,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub passed: usize,
    pub failed: usize,
    pub max_gap: f64,
}

/// Objective-equivalence suite. Instance `i` uses `LAMBDAS[i % 5]` and
/// `PHI_KINDS[(i / 5) % 4]`, so every 20 consecutive instances cover all pairs.
/// Instances with `phi = V_pi` are held to `min(tol, 1e-9)`.
pub fn verify_suite(seed: u64, instances: usize, tol: f64) -> Result<(Vec<VerifyCase>, SuiteSummary)> {
    let shape = InstanceShape::default();
    let cases = (0..instances)
        .into_par_iter()
        .map(|index| verify_one(seed, index, &shape, tol))
        .collect::<Result<Vec<_>>>()?;
    let summary = SuiteSummary {
        passed: cases.iter().filter(|c| c.passed).count(),
        failed: cases.iter().filter(|c| !c.passed).count(),
        max_gap: cases.iter().map(|c| c.report.max_pairwise_gap).fold(0.0, f64::max),
    };
    Ok((cases, summary))
}

fn verify_one(seed: u64, index: usize, shape: &InstanceShape, tol: f64) -> Result<VerifyCase> {
    let mut inst = random_instance(seed, index, shape)?;
    let lambda = LAMBDAS[index % LAMBDAS.len()];
    let kind = PHI_KINDS[(index / LAMBDAS.len()) % PHI_KINDS.len()];
    let ns = inst.model.num_states();
    let values = match kind {
        PhiKind::Zero => DVector::zeros(ns),
        PhiKind::Value => evaluate_exact(&induce(&inst.model, &inst.policy)?, inst.model.gamma())?,
        PhiKind::NoisyValue => {
            let v = evaluate_exact(&induce(&inst.model, &inst.policy)?, inst.model.gamma())?;
            v.map(|x| x + inst.rng.random_range(-1.0..=1.0))
        }
        PhiKind::Random => DVector::from_fn(ns, |_, _| inst.rng.random_range(-5.0..=5.0)),
    };
    let report = equivalence_report(&inst.model, &inst.policy, lambda, &PhiFunction::new(values)?)?;
    let tolerance = if kind == PhiKind::Value { tol.min(EXACT_BASELINE_TOL) } else { tol };
    Ok(VerifyCase {
        index,
        num_states: ns,
        num_actions: inst.model.num_actions(),
        gamma: inst.model.gamma(),
        lambda,
        phi: kind,
        passed: report.max_pairwise_gap <= tolerance,
        report,
        tolerance,
    })
}

/// Weight of the random policy when forming `pi` from `pi'`, cycled by instance,
/// so the suite covers both distant and nearby policy pairs.
pub const MIX_WEIGHTS: [f64; 3] = [1.0, 0.3, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCase {
    pub index: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub mix_weight: f64,
    pub surrogate: SurrogateReport,
    pub pinsker: PinskerChain,
    pub bound_holds: bool,
    pub pinsker_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSuite {
    pub cases: Vec<BoundCase>,
    pub counterexamples: Vec<Counterexample>,
    pub summary: SuiteSummary,
}

/// Checks the surrogate lower bound and the Pinsker chain on random pairs
/// `(pi, pi')`, where `pi' = pi_gen` and `pi = w * pi_rand + (1 - w) pi'`.
/// `max_gap` in the summary is the largest amount by which a bound was violated.
pub fn bound_check_suite(seed: u64, instances: usize) -> Result<BoundSuite> {
    let shape = InstanceShape::default();
    let results = (0..instances)
        .into_par_iter()
        .map(|index| bound_one(seed, index, &shape))
        .collect::<Result<Vec<_>>>()?;
    let mut cases = Vec::with_capacity(results.len());
    let mut counterexamples = Vec::new();
    for (case, cex) in results {
        cases.push(case);
        counterexamples.extend(cex);
    }
    let passed = cases.iter().filter(|c| c.bound_holds && c.pinsker_holds).count();
    let max_gap = cases
        .iter()
        .map(|c| (c.surrogate.lower_bound - c.surrogate.true_gap).max(0.0))
        .fold(0.0, f64::max);
    let summary = SuiteSummary {
        passed,
        failed: cases.len() - passed,
        max_gap,
    };
    Ok(BoundSuite {
        cases,
        counterexamples,
        summary,
    })
}

fn bound_one(seed: u64, index: usize, shape: &InstanceShape) -> Result<(BoundCase, Option<Counterexample>)> {
    let mut inst = random_instance(seed, index, shape)?;
    let (ns, na) = (inst.model.num_states(), inst.model.num_actions());
    let lambda = LAMBDAS[index % LAMBDAS.len()];
    let mix_weight = MIX_WEIGHTS[(index / LAMBDAS.len()) % MIX_WEIGHTS.len()];
    let pi_prime = inst.policy.clone();
    let pi = random_policy(&mut inst.rng, ns, na).mix(&pi_prime, mix_weight)?;
    let surrogate = surrogate_bound(&inst.model, &pi, &pi_prime, lambda)?;
    let pinsker = pinsker_chain(&inst.model, &pi, &pi_prime, lambda)?;
    let bound_holds = surrogate.holds(BOUND_SLACK);
    let cex = (!bound_holds).then(|| Counterexample::new(&inst.model, &pi, &pi_prime, surrogate));
    Ok((
        BoundCase {
            index,
            num_states: ns,
            num_actions: na,
            gamma: inst.model.gamma(),
            mix_weight,
            surrogate,
            pinsker,
            bound_holds,
            pinsker_holds: pinsker.holds(1e-12),
        },
        cex,
    ))
}
