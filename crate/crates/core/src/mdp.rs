//! Finite MDP and stationary policy data model.
//!
//! An [`MdpModel`] holds the tuple `(S, A, P, r, rho0, gamma)` as dense
//! row-major arrays. Rewards follow the next-state-dependent convention
//! `r(s' | s, a)`; the file layer also accepts the common `r(s, a)` layout and
//! broadcasts it over `s'`.
//!
//! Models and policies are validated at construction. [`validate_mdp`] and
//! [`validate_policy`] report every violation on raw parsed data without
//! failing, so a caller can show the complete list.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of stochastic tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// One invariant violation, addressed by an index path such as `transition[0][1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

/// Every violation found in a model or policy; empty when valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

/// Reward table as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RewardTable {
    /// `reward[s][a][s']`
    PerTransition(Vec<Vec<Vec<f64>>>),
    /// `reward[s][a]`, broadcast over next states.
    PerStateAction(Vec<Vec<f64>>),
}

/// MDP JSON document, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub rho0: Vec<f64>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: RewardTable,
}

impl MdpFile {
    /// Rescales every transition row and `rho0` to sum to one. Rows with a
    /// non-positive sum are left untouched so validation still reports them.
    pub fn normalized(&self) -> MdpFile {
        let mut out = self.clone();
        for row in out.transition.iter_mut().flatten() {
            normalize_in_place(row);
        }
        normalize_in_place(&mut out.rho0);
        out
    }
}

fn normalize_in_place(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 && total.is_finite() {
        row.iter_mut().for_each(|x| *x /= total);
    }
}

fn check_distribution(report: &mut ValidationReport, path: &str, label: &str, row: &[f64]) {
    for (k, &p) in row.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            report.push(format!("{path}[{k}]"), format!("entry {p} outside [0, 1]"));
        }
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL || !total.is_finite() {
        report.push(path.to_string(), format!("{label} sums to {total}"));
    }
}

/// Checks every invariant of an MDP document and lists the violations.
pub fn validate_mdp(file: &MdpFile) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (ns, na) = (file.num_states, file.num_actions);
    if ns == 0 {
        report.push("num_states", "must be positive");
    }
    if na == 0 {
        report.push("num_actions", "must be positive");
    }
    if !(file.gamma > 0.0 && file.gamma < 1.0) {
        report.push("gamma", format!("gamma out of (0,1): {}", file.gamma));
    }

    if file.rho0.len() != ns {
        report.push("rho0", format!("expected {ns} entries, found {}", file.rho0.len()));
    } else {
        check_distribution(&mut report, "rho0", "rho0", &file.rho0);
    }

    if file.transition.len() != ns {
        report.push(
            "transition",
            format!("expected {ns} states, found {}", file.transition.len()),
        );
    } else {
        for (s, per_action) in file.transition.iter().enumerate() {
            if per_action.len() != na {
                report.push(
                    format!("transition[{s}]"),
                    format!("expected {na} actions, found {}", per_action.len()),
                );
                continue;
            }
            for (a, row) in per_action.iter().enumerate() {
                let path = format!("transition[{s}][{a}]");
                if row.len() != ns {
                    report.push(path, format!("expected {ns} next states, found {}", row.len()));
                    continue;
                }
                check_distribution(&mut report, &path, &format!("row ({s},{a})"), row);
            }
        }
    }

    match &file.reward {
        RewardTable::PerTransition(r) => {
            if r.len() != ns {
                report.push("reward", format!("expected {ns} states, found {}", r.len()));
            } else {
                for (s, per_action) in r.iter().enumerate() {
                    if per_action.len() != na {
                        report.push(
                            format!("reward[{s}]"),
                            format!("expected {na} actions, found {}", per_action.len()),
                        );
                        continue;
                    }
                    for (a, row) in per_action.iter().enumerate() {
                        if row.len() != ns {
                            report.push(
                                format!("reward[{s}][{a}]"),
                                format!("expected {ns} next states, found {}", row.len()),
                            );
                            continue;
                        }
                        for (k, x) in row.iter().enumerate() {
                            if !x.is_finite() {
                                report.push(format!("reward[{s}][{a}][{k}]"), "reward is not finite");
                            }
                        }
                    }
                }
            }
        }
        RewardTable::PerStateAction(r) => {
            if r.len() != ns {
                report.push("reward", format!("expected {ns} states, found {}", r.len()));
            } else {
                for (s, row) in r.iter().enumerate() {
                    if row.len() != na {
                        report.push(
                            format!("reward[{s}]"),
                            format!("expected {na} actions, found {}", row.len()),
                        );
                        continue;
                    }
                    for (a, x) in row.iter().enumerate() {
                        if !x.is_finite() {
                            report.push(format!("reward[{s}][{a}]"), "reward is not finite");
                        }
                    }
                }
            }
        }
    }
    report
}

/// A validated finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    num_states: usize,
    num_actions: usize,
    /// Row-major `[s][a][s']`.
    transition: Vec<f64>,
    /// Row-major `[s][a][s']`.
    reward: Vec<f64>,
    rho0: DVector<f64>,
    gamma: f64,
    /// `R(s, a) = sum_s' P(s'|s,a) r(s'|s,a)`
    expected_reward: DMatrix<f64>,
}

impl MdpModel {
    /// Builds a model from flat row-major `[s][a][s']` tables.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        rho0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let n = num_states * num_actions * num_states;
        if transition.len() != n {
            return Err(Error::DimensionMismatch {
                what: "transition tensor length",
                expected: n,
                actual: transition.len(),
            });
        }
        if reward.len() != n {
            return Err(Error::DimensionMismatch {
                what: "reward tensor length",
                expected: n,
                actual: reward.len(),
            });
        }
        let file = MdpFile {
            num_states,
            num_actions,
            gamma,
            rho0,
            transition: nest3(&transition, num_states, num_actions),
            reward: RewardTable::PerTransition(nest3(&reward, num_states, num_actions)),
        };
        Self::from_file(&file)
    }

    /// Validates a parsed document and builds the model.
    pub fn from_file(file: &MdpFile) -> Result<Self> {
        let report = validate_mdp(file);
        if !report.is_valid() {
            return Err(Error::InvalidModel(report));
        }
        let (ns, na) = (file.num_states, file.num_actions);
        let transition: Vec<f64> = file.transition.iter().flatten().flatten().copied().collect();
        let reward: Vec<f64> = match &file.reward {
            RewardTable::PerTransition(r) => r.iter().flatten().flatten().copied().collect(),
            RewardTable::PerStateAction(r) => r
                .iter()
                .flatten()
                .flat_map(|&x| std::iter::repeat_n(x, ns))
                .collect(),
        };
        let mut expected_reward = DMatrix::zeros(ns, na);
        for s in 0..ns {
            for a in 0..na {
                let base = (s * na + a) * ns;
                expected_reward[(s, a)] = (0..ns)
                    .map(|k| transition[base + k] * reward[base + k])
                    .sum();
            }
        }
        Ok(Self {
            num_states: ns,
            num_actions: na,
            transition,
            reward,
            rho0: DVector::from_vec(file.rho0.clone()),
            gamma: file.gamma,
            expected_reward,
        })
    }

    /// The document form, with rewards in the per-transition layout.
    pub fn to_file(&self) -> MdpFile {
        MdpFile {
            num_states: self.num_states,
            num_actions: self.num_actions,
            gamma: self.gamma,
            rho0: self.rho0.iter().copied().collect(),
            transition: nest3(&self.transition, self.num_states, self.num_actions),
            reward: RewardTable::PerTransition(nest3(&self.reward, self.num_states, self.num_actions)),
        }
    }

    /// Same dynamics with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        crate::error::check_discount(gamma)?;
        Ok(Self { gamma, ..self.clone() })
    }

    /// Same dynamics with every reward mapped through `f`.
    pub fn map_rewards(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.iter().map(|&r| f(r)).collect(),
            self.rho0.iter().copied().collect(),
            self.gamma,
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho0(&self) -> &DVector<f64> {
        &self.rho0
    }

    /// `P(s' | s, a)`
    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[self.offset(s, a) + next]
    }

    /// `P(. | s, a)` as a slice over next states.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = self.offset(s, a);
        &self.transition[base..base + self.num_states]
    }

    /// `r(s' | s, a)`
    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[self.offset(s, a) + next]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let base = self.offset(s, a);
        &self.reward[base..base + self.num_states]
    }

    /// `R(s, a)`, the expected one-step reward.
    pub fn expected_reward(&self) -> &DMatrix<f64> {
        &self.expected_reward
    }

    /// Largest absolute reward.
    pub fn reward_bound(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// `sum_s' P(s'|s,a) v(s')` for every `(s, a)`.
    pub fn expected_next(&self, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_states, self.num_actions, |s, a| {
            self.transition_row(s, a)
                .iter()
                .zip(v.iter())
                .map(|(p, x)| p * x)
                .sum()
        })
    }

    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    pub(crate) fn check_policy(&self, policy: &PolicyTable) -> Result<()> {
        if policy.num_states() != self.num_states {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: self.num_states,
                actual: policy.num_states(),
            });
        }
        if policy.num_actions() != self.num_actions {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: self.num_actions,
                actual: policy.num_actions(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_vector(&self, what: &'static str, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.num_states {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.num_states,
                actual: v.len(),
            });
        }
        Ok(())
    }
}

fn nest3(flat: &[f64], ns: usize, na: usize) -> Vec<Vec<Vec<f64>>> {
    (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let base = (s * na + a) * ns;
                    flat.get(base..base + ns).map(<[f64]>::to_vec).unwrap_or_default()
                })
                .collect()
        })
        .collect()
}

/// Checks a raw `[s][a]` policy table against the expected shape.
pub fn validate_policy(rows: &[Vec<f64>], num_states: usize, num_actions: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    if rows.len() != num_states {
        report.push("policy", format!("expected {num_states} states, found {}", rows.len()));
        return report;
    }
    for (s, row) in rows.iter().enumerate() {
        let path = format!("policy[{s}]");
        if row.len() != num_actions {
            report.push(path, format!("expected {num_actions} actions, found {}", row.len()));
            continue;
        }
        check_distribution(&mut report, &path, &format!("row {s}"), row);
    }
    report
}

/// A stationary Markov policy `pi(a | s)`, row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    probs: DMatrix<f64>,
}

impl PolicyTable {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ns = rows.len();
        let na = rows.first().map_or(0, Vec::len);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidPolicy(ValidationReport {
                violations: vec![Violation {
                    path: "policy".into(),
                    message: "policy table is empty".into(),
                }],
            }));
        }
        let report = validate_policy(rows, ns, na);
        if !report.is_valid() {
            return Err(Error::InvalidPolicy(report));
        }
        Ok(Self {
            probs: DMatrix::from_fn(ns, na, |s, a| rows[s][a]),
        })
    }

    pub fn from_matrix(probs: DMatrix<f64>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = probs.row_iter().map(|r| r.iter().copied().collect()).collect();
        Self::from_rows(&rows)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64),
        }
    }

    /// Deterministic policy playing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = actions
            .iter()
            .map(|&a| (0..num_actions).map(|k| if k == a { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::from_rows(&rows)
    }

    /// `alpha * self + (1 - alpha) * other`
    pub fn mix(&self, other: &PolicyTable, alpha: f64) -> Result<Self> {
        crate::error::check_unit_interval("alpha", alpha)?;
        if self.probs.shape() != other.probs.shape() {
            return Err(Error::DimensionMismatch {
                what: "mixed policy states",
                expected: self.num_states(),
                actual: other.num_states(),
            });
        }
        Ok(Self {
            probs: &self.probs * alpha + &other.probs * (1.0 - alpha),
        })
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// Wraps a table that is row-stochastic by construction.
    pub(crate) fn from_matrix_unchecked(probs: DMatrix<f64>) -> Self {
        Self { probs }
    }
}

impl Serialize for PolicyTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PolicyTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        PolicyTable::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// One-step quantities induced by running a policy on a model.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedDynamics {
    /// `P_pi[s, s'] = sum_a pi(a|s) P(s'|s,a)`
    pub p_pi: DMatrix<f64>,
    /// `r_pi[s] = sum_a pi(a|s) R(s,a)`
    pub r_pi: DVector<f64>,
    /// `R(s, a)`
    pub r_sa: DMatrix<f64>,
}

/// Marginalizes the policy's actions out of the model.
pub fn induce(model: &MdpModel, policy: &PolicyTable) -> Result<InducedDynamics> {
    model.check_policy(policy)?;
    let (ns, na) = (model.num_states(), model.num_actions());
    let mut p_pi = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let w = policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (k, p) in model.transition_row(s, a).iter().enumerate() {
                p_pi[(s, k)] += w * p;
            }
        }
    }
    let r_sa = model.expected_reward().clone();
    let r_pi = DVector::from_fn(ns, |s, _| (0..na).map(|a| policy.prob(s, a) * r_sa[(s, a)]).sum());
    Ok(InducedDynamics { p_pi, r_pi, r_sa })
}
