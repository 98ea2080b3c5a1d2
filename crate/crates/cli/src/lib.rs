//! Command-line front end for `rlobj-core`.
//!
//! Every command produces one JSON report of the form
//! `{command, version, config, results, summary: {passed, failed, max_gap}}`.
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage or
//! input errors (the report then carries an `error` object instead of results).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use rlobj_core::generate::random_policy;
use rlobj_core::mdp::ValidationReport;
use rlobj_core::objectives::{equivalence_report, PhiFunction};
use rlobj_core::optimization::{pinsker_chain, Counterexample, KlDirection};
use rlobj_core::sampler::{
    mean_and_standard_error, sample_returns, sample_trajectories, stream_rng, truncation_bound, truncation_horizon,
};
use rlobj_core::suite::{bound_check_suite, verify_suite, BOUND_SLACK, LAMBDAS};
use rlobj_core::transition::{discounted_distribution, Start};
use rlobj_core::value::bellman_apply;
use rlobj_core::{
    build_lambda_model, evaluate_exact, evaluate_policy, induce, objective_standard, optimize, surrogate_bound,
    validate_mdp, validate_policy, MdpFile, MdpModel, PolicyTable, TrustRegionConfig, VERSION,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

/// Truncation bias targeted by `sample` when no horizon is given.
pub const DEFAULT_SAMPLE_BIAS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    /// Check an MDP (and optionally a policy) file against the schema.
    Validate,
    /// Exact V, Q and advantages of a policy.
    Evaluate,
    /// Discounted and lambda-discounted state distributions.
    Distributions,
    /// The four objective forms side by side.
    Objectives,
    /// Objective-equivalence suite over random instances (or the given MDP).
    Verify,
    /// Monte Carlo estimate of the objective against the exact value.
    Sample,
    /// KL trust-region policy optimization.
    Optimize,
    /// Surrogate lower bound and Pinsker chain checks.
    BoundCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirectionArg {
    /// KL(pi || pi_k)
    CandidateToCurrent,
    /// KL(pi_k || pi)
    CurrentToCandidate,
}

impl From<KlDirectionArg> for KlDirection {
    fn from(d: KlDirectionArg) -> Self {
        match d {
            KlDirectionArg::CandidateToCurrent => KlDirection::CandidateToCurrent,
            KlDirectionArg::CurrentToCandidate => KlDirection::CurrentToCandidate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Parser, Serialize)]
#[command(name = "rlobj", version, about = "Tabular MDP objective, GAE bound and trust-region tools")]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: CommandKind,
    /// MDP JSON file.
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    /// Policy JSON file (`[s][a]` rows); uniform when omitted.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Baseline JSON file (array over states) for `objectives`; zero when omitted.
    #[arg(long)]
    pub phi: Option<PathBuf>,
    /// Replaces the discount factor of the MDP file.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random instances for the suites.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Rescale transition rows and rho0 to sum to one before validation.
    #[arg(long)]
    pub normalize: bool,
    /// Trajectory length for `sample`.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Trajectory count for `sample`.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Trust-region steps for `optimize`.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// KL budget for `optimize`.
    #[arg(long, default_value_t = 0.01)]
    pub radius: f64,
    #[arg(long, value_enum, default_value_t = KlDirectionArg::CandidateToCurrent)]
    pub kl_direction: KlDirectionArg,
    /// JSON-lines side output: trajectories for `sample`, counterexamples for `bound-check`.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Add a generation timestamp; reports are byte-reproducible without it.
    #[arg(long)]
    pub timestamp: bool,
}

impl RunConfig {
    /// Defaults for `command`, as if no flags were given.
    pub fn new(command: CommandKind) -> Self {
        let name = command.to_possible_value().expect("no skipped variants").get_name().to_string();
        Self::parse_from(["rlobj", name.as_str()])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub passed: usize,
    pub failed: usize,
    pub max_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: CommandKind,
    pub version: &'static str,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
    pub results: Value,
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub report: Report,
}

impl Outcome {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.report).expect("report is plain data");
        text.push('\n');
        text
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {report}")]
    Schema { path: PathBuf, report: ValidationReport },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rlobj_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use rlobj_core::Error as E;
        match self {
            CliError::Core(E::Singular(_) | E::NotConverged { .. } | E::Bisection { .. } | E::NegativeMass { .. }) => {
                EXIT_CHECK_FAILED
            }
            _ => EXIT_INPUT,
        }
    }

    fn info(&self) -> ErrorInfo {
        let (kind, path, line, column) = match self {
            CliError::Io { path, .. } => ("io", Some(path), None, None),
            CliError::Parse { path, line, column, .. } => ("parse", Some(path), Some(*line), Some(*column)),
            CliError::Schema { path, .. } => ("schema", Some(path), None, None),
            CliError::Usage(_) => ("usage", None, None, None),
            CliError::Core(_) => ("computation", None, None, None),
        };
        ErrorInfo {
            kind: kind.into(),
            message: self.to_string(),
            path: path.map(|p| p.display().to_string()),
            line,
            column,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Checked {
    results: Value,
    summary: Summary,
}

/// Runs one command. Never panics on bad input; errors become exit code 2 reports.
pub fn run(config: &RunConfig) -> Outcome {
    let generated_at = config.timestamp.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });
    let (exit_code, results, summary, error) = match dispatch(config) {
        Ok(c) => {
            let code = if c.summary.failed == 0 { EXIT_PASS } else { EXIT_CHECK_FAILED };
            (code, c.results, c.summary, None)
        }
        Err(e) => (e.exit_code(), Value::Null, Summary::default(), Some(e.info())),
    };
    Outcome {
        exit_code,
        report: Report {
            command: config.command,
            version: VERSION,
            config: config.clone(),
            generated_at,
            results,
            summary,
            error,
        },
    }
}

/// Writes the report to `--output`, or returns it for standard output.
pub fn emit(config: &RunConfig, outcome: &Outcome) -> CliResult<Option<String>> {
    let text = outcome.to_json();
    match &config.output {
        Some(path) => {
            fs::write(path, text).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(None)
        }
        None => Ok(Some(text)),
    }
}

fn dispatch(config: &RunConfig) -> CliResult<Checked> {
    check_flags(config)?;
    match config.command {
        CommandKind::Validate => cmd_validate(config),
        CommandKind::Evaluate => cmd_evaluate(config),
        CommandKind::Distributions => cmd_distributions(config),
        CommandKind::Objectives => cmd_objectives(config),
        CommandKind::Verify => cmd_verify(config),
        CommandKind::Sample => cmd_sample(config),
        CommandKind::Optimize => cmd_optimize(config),
        CommandKind::BoundCheck => cmd_bound_check(config),
    }
}

fn check_flags(config: &RunConfig) -> CliResult<()> {
    let needs_mdp = !matches!(config.command, CommandKind::Verify | CommandKind::BoundCheck);
    if needs_mdp && config.mdp.is_none() {
        return Err(CliError::Usage(format!(
            "{} requires --mdp",
            config.command.to_possible_value().expect("no skipped variants").get_name()
        )));
    }
    if !(0.0..=1.0).contains(&config.lambda) {
        return Err(CliError::Usage(format!("--lambda {} outside [0, 1]", config.lambda)));
    }
    if !(config.tol > 0.0) {
        return Err(CliError::Usage(format!("--tol {} is not positive", config.tol)));
    }
    if config.instances == 0 || config.count == 0 || config.steps == 0 || config.horizon == Some(0) {
        return Err(CliError::Usage("--instances, --count, --steps and --horizon must be positive".into()));
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn load_file(config: &RunConfig) -> CliResult<(PathBuf, MdpFile)> {
    let path = config.mdp.clone().expect("checked by check_flags");
    let mut file: MdpFile = read_json(&path)?;
    if config.normalize {
        file = file.normalized();
    }
    if let Some(gamma) = config.gamma {
        file.gamma = gamma;
    }
    Ok((path, file))
}

fn load_model(config: &RunConfig) -> CliResult<MdpModel> {
    let (path, file) = load_file(config)?;
    let report = validate_mdp(&file);
    if !report.is_valid() {
        return Err(CliError::Schema { path, report });
    }
    Ok(MdpModel::from_file(&file)?)
}

fn load_policy(config: &RunConfig, model: &MdpModel) -> CliResult<PolicyTable> {
    let Some(path) = &config.policy else {
        return Ok(PolicyTable::uniform(model.num_states(), model.num_actions()));
    };
    let rows: Vec<Vec<f64>> = read_json(path)?;
    let report = validate_policy(&rows, model.num_states(), model.num_actions());
    if !report.is_valid() {
        return Err(CliError::Schema {
            path: path.clone(),
            report,
        });
    }
    Ok(PolicyTable::from_rows(&rows)?)
}

fn load_phi(config: &RunConfig, model: &MdpModel) -> CliResult<PhiFunction> {
    let Some(path) = &config.phi else {
        return Ok(PhiFunction::zeros(model.num_states()));
    };
    let values: Vec<f64> = read_json(path)?;
    if values.len() != model.num_states() {
        return Err(CliError::Usage(format!(
            "{}: baseline has {} entries for {} states",
            path.display(),
            values.len(),
            model.num_states()
        )));
    }
    Ok(PhiFunction::new(DVector::from_vec(values))?)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn single(passed: bool, gap: f64) -> Summary {
    Summary {
        passed: usize::from(passed),
        failed: usize::from(!passed),
        max_gap: gap,
    }
}

fn cmd_validate(config: &RunConfig) -> CliResult<Checked> {
    let (_, file) = load_file(config)?;
    let mut violations = validate_mdp(&file).violations;
    if let Some(path) = &config.policy {
        let rows: Vec<Vec<f64>> = read_json(path)?;
        violations.extend(
            validate_policy(&rows, file.num_states, file.num_actions)
                .violations
                .into_iter()
                .map(|mut v| {
                    v.path = format!("policy.{}", v.path);
                    v
                }),
        );
    }
    let valid = violations.is_empty();
    Ok(Checked {
        results: json!({ "valid": valid, "violations": violations }),
        summary: Summary {
            passed: usize::from(valid),
            failed: violations.len(),
            max_gap: 0.0,
        },
    })
}

fn cmd_evaluate(config: &RunConfig) -> CliResult<Checked> {
    let model = load_model(config)?;
    let policy = load_policy(config, &model)?;
    let bundle = evaluate_policy(&model, &policy)?;
    let dynamics = induce(&model, &policy)?;
    let residual = (bellman_apply(&dynamics, model.gamma(), &bundle.v) - &bundle.v).amax();
    Ok(Checked {
        results: json!({
            "v": vector(&bundle.v),
            "q": rows(&bundle.q),
            "adv": rows(&bundle.adv),
            "bellman_residual": residual,
        }),
        summary: single(residual <= config.tol, residual),
    })
}

fn cmd_distributions(config: &RunConfig) -> CliResult<Checked> {
    let model = load_model(config)?;
    let policy = load_policy(config, &model)?;
    let dynamics = induce(&model, &policy)?;
    let d = discounted_distribution(&dynamics, model.gamma(), &Start::Distribution(model.rho0().clone()))?;
    let per_start = (0..model.num_states())
        .map(|s| discounted_distribution(&dynamics, model.gamma(), &Start::State(s)).map(|d| vector(&d.weights)))
        .collect::<Result<Vec<_>, _>>()?;
    let lm = build_lambda_model(&model, &policy, config.lambda)?;
    let residual = lm.distribution_residual(model.rho0());
    let gap = (d.weights.sum() - 1.0).abs().max((lm.d_lambda.sum() - 1.0).abs()).max(residual);
    Ok(Checked {
        results: json!({
            "d_rho0": vector(&d.weights),
            "d_from_state": per_start,
            "lambda": config.lambda,
            "gamma_tilde": lm.gamma_tilde,
            "d_lambda": vector(&lm.d_lambda),
            "p_lambda": rows(&lm.p_lambda),
            "r_lambda": vector(&lm.r_lambda),
            "d_lambda_residual": residual,
        }),
        summary: single(gap <= 1e-10, gap),
    })
}

fn cmd_objectives(config: &RunConfig) -> CliResult<Checked> {
    let model = load_model(config)?;
    let policy = load_policy(config, &model)?;
    let phi = load_phi(config, &model)?;
    let report = equivalence_report(&model, &policy, config.lambda, &phi)?;
    Ok(Checked {
        results: serde_json::to_value(report).expect("plain data"),
        summary: single(report.max_pairwise_gap <= config.tol, report.max_pairwise_gap),
    })
}

fn cmd_verify(config: &RunConfig) -> CliResult<Checked> {
    if config.mdp.is_none() {
        let (cases, s) = verify_suite(config.seed, config.instances, config.tol)?;
        return Ok(Checked {
            results: serde_json::to_value(cases).expect("plain data"),
            summary: Summary {
                passed: s.passed,
                failed: s.failed,
                max_gap: s.max_gap,
            },
        });
    }
    let model = load_model(config)?;
    let policy = load_policy(config, &model)?;
    let v = evaluate_exact(&induce(&model, &policy)?, model.gamma())?;
    let mut cases = Vec::new();
    for lambda in LAMBDAS {
        for (name, phi, tol) in [
            ("zero", PhiFunction::zeros(model.num_states()), config.tol),
            ("value", PhiFunction::new(v.clone())?, config.tol.min(1e-9)),
        ] {
            let report = equivalence_report(&model, &policy, lambda, &phi)?;
            cases.push((lambda, name, tol, report));
        }
    }
    let passed = cases.iter().filter(|c| c.3.max_pairwise_gap <= c.2).count();
    let max_gap = cases.iter().map(|c| c.3.max_pairwise_gap).fold(0.0, f64::max);
    let results = cases
        .iter()
        .map(|(lambda, phi, tol, report)| {
            json!({ "lambda": lambda, "phi": phi, "tolerance": tol, "report": report,
                    "passed": report.max_pairwise_gap <= *tol })
        })
        .collect::<Vec<_>>();
    Ok(Checked {
        results: Value::Array(results),
        summary: Summary {
            passed,
            failed: cases.len() - passed,
            max_gap,
        },
    })
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> CliResult<()> {
    let mut text = String::new();
    for line in lines {
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_sample(config: &RunConfig) -> CliResult<Checked> {
    let model = load_model(config)?;
    let policy = load_policy(config, &model)?;
    let gamma = model.gamma();
    let r_max = model.reward_bound();
    let horizon = config
        .horizon
        .unwrap_or_else(|| truncation_horizon(gamma, r_max, DEFAULT_SAMPLE_BIAS));
    let estimate = if let Some(path) = &config.dump {
        let trajs = sample_trajectories(&model, &policy, horizon, config.count, config.seed)?;
        write_lines(
            path,
            trajs.iter().map(|t| serde_json::to_string(t).expect("plain data")),
        )?;
        rlobj_core::sampler::monte_carlo_objective(&trajs, gamma)?
    } else {
        mean_and_standard_error(&sample_returns(&model, &policy, horizon, config.count, config.seed)?)
    };
    let exact = objective_standard(&model, &policy)?.value_form;
    let bias = truncation_bound(gamma, r_max, horizon);
    let allowed = 3.0 * estimate.standard_error + bias;
    let gap = (estimate.estimate - exact).abs();
    Ok(Checked {
        results: json!({
            "horizon": horizon,
            "count": config.count,
            "estimate": estimate.estimate,
            "standard_error": estimate.standard_error,
            "exact": exact,
            "truncation_bound": bias,
            "allowed_gap": allowed,
        }),
        summary: single(gap <= allowed, gap),
    })
}

fn cmd_optimize(config: &RunConfig) -> CliResult<Checked> {
    let model = load_model(config)?;
    let start = load_policy(config, &model)?;
    let cfg = TrustRegionConfig {
        direction: config.kl_direction.into(),
        ..TrustRegionConfig::new(config.radius, config.lambda)
    };
    let records = optimize(&model, &start, &cfg, config.steps)?;
    let initial = objective_standard(&model, &start)?.value_form;
    let mut prev = initial;
    let mut worst_drop = 0.0f64;
    let mut violations = 0;
    let steps: Vec<Value> = records
        .iter()
        .map(|r| {
            let drop = prev - r.objective;
            let ok = drop <= 1e-9 && r.kl <= 1.05 * cfg.radius;
            worst_drop = worst_drop.max(drop);
            violations += usize::from(!ok);
            prev = r.objective;
            json!({ "step": r.step, "objective": r.objective, "kl": r.kl, "passed": ok })
        })
        .collect();
    let last = records.last().expect("at least one step");
    Ok(Checked {
        results: json!({
            "initial_objective": initial,
            "final_objective": last.objective,
            "final_policy": last.policy,
            "steps": steps,
        }),
        summary: Summary {
            passed: records.len() - violations,
            failed: violations,
            max_gap: worst_drop.max(0.0),
        },
    })
}

fn cmd_bound_check(config: &RunConfig) -> CliResult<Checked> {
    if config.mdp.is_none() {
        let suite = bound_check_suite(config.seed, config.instances)?;
        if let Some(path) = &config.dump {
            write_lines(path, suite.counterexamples.iter().map(|c| serde_json::to_string(c).expect("plain data")))?;
        }
        return Ok(Checked {
            results: json!({ "cases": suite.cases, "counterexamples": suite.counterexamples }),
            summary: Summary {
                passed: suite.summary.passed,
                failed: suite.summary.failed,
                max_gap: suite.summary.max_gap,
            },
        });
    }
    let model = load_model(config)?;
    let reference = load_policy(config, &model)?;
    let mut cases = Vec::with_capacity(config.instances);
    let mut counterexamples = Vec::new();
    let mut max_gap = 0.0f64;
    let mut passed = 0;
    for i in 0..config.instances {
        let mut rng = stream_rng(config.seed, i as u64);
        let candidate = random_policy(&mut rng, model.num_states(), model.num_actions());
        let report = surrogate_bound(&model, &candidate, &reference, config.lambda)?;
        let chain = pinsker_chain(&model, &candidate, &reference, config.lambda)?;
        let holds = report.holds(BOUND_SLACK);
        max_gap = max_gap.max(report.lower_bound - report.true_gap);
        passed += usize::from(holds && chain.holds(1e-12));
        if !holds {
            counterexamples.push(Counterexample::new(&model, &candidate, &reference, report));
        }
        cases.push(json!({ "index": i, "candidate": candidate, "surrogate": report, "pinsker": chain }));
    }
    if let Some(path) = &config.dump {
        write_lines(path, counterexamples.iter().map(|c| serde_json::to_string(c).expect("plain data")))?;
    }
    Ok(Checked {
        results: json!({ "cases": cases, "counterexamples": counterexamples }),
        summary: Summary {
            passed,
            failed: config.instances - passed,
            max_gap: max_gap.max(0.0),
        },
    })
}
