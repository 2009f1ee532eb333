//! Executes one experiment and renders its report.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use noniid::calibration::Calibration;
use noniid::distances::{classical_report, quantum_report, ClassicalDivergenceReport, QuantumDivergenceReport};
use noniid::fixtures::{far_fixtures, null_fixtures, NamedInstance};
use noniid::observables::{check_instance, exact_moments, Instance, KindTag, MomentReport, ObservableKind};
use noniid::simulate::{estimate_success, RateEstimate};
use noniid::states::{read_ensemble_json, read_state_json, ClassicalDistribution, DensityMatrix, ProductEnsemble};
use noniid::sweep::{calibrate, default_grid, SweepOptions, SweepReport};
use noniid::testers::{epsilon_to_theta, required_t, run_trial, ChebyshevRule, TestDecision};
use noniid::verify::{self, Suite, SuiteReport, VerifyOptions};

use crate::config::{Command, ExperimentConfig, TSpec, DEFAULT_INSTANCES, DEFAULT_SEED, DEFAULT_TRIALS};
use crate::error::CliError;

pub const TOOL: &str = "noniid";
/// Off-diagonal magnitude tolerated when a state stands for a distribution.
pub const DIAGONAL_TOL: f64 = 1e-12;
/// Training and held-out instances per kind for `calibrate` by default.
pub const DEFAULT_CALIBRATION_INSTANCES: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Rendered report plus a human summary and the exit status it implies.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub format: Format,
    pub text: String,
    pub summary: String,
    pub passed: bool,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: Command,
    seed: Option<u64>,
    config: &'a ExperimentConfig,
    result: T,
}

fn envelope<T: Serialize>(cfg: &ExperimentConfig, result: T) -> Result<String, CliError> {
    let env = Envelope { tool: TOOL, version: noniid::VERSION, command: cfg.command()?, seed: cfg.seed, config: cfg, result };
    Ok(serde_json::to_string_pretty(&env).expect("plain data serializes") + "\n")
}

fn csv_preamble(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let config = serde_json::to_string(cfg).expect("plain data serializes");
    Ok(format!("# {} {} {}\n# config {}\n", TOOL, noniid::VERSION, cfg.command()?.as_str(), config))
}

fn csv_body<R: Serialize>(rows: &[R]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

fn input<T>(path: &Path, parse: impl Fn(&str) -> noniid::Result<T>) -> Result<T, CliError> {
    parse(&read_text(path)?).map_err(|source| CliError::Input { path: path.display().to_string(), source })
}

pub fn load_calibration(cfg: &ExperimentConfig) -> Result<Calibration, CliError> {
    match &cfg.calibration {
        Some(p) => input(p, Calibration::parse),
        None => Ok(Calibration::builtin()),
    }
}

fn classical_reference(rho: &DensityMatrix, path: &Path) -> Result<ClassicalDistribution, CliError> {
    if !rho.is_diagonal(DIAGONAL_TOL) {
        return Err(CliError::Config(format!("{}: a classical reference must be diagonal", path.display())));
    }
    Ok(ClassicalDistribution::from_density(rho)?)
}

/// Reference for kinds that need one, read from `sigma`.
fn reference_kind(cfg: &ExperimentConfig, kind: KindTag) -> Result<ObservableKind, CliError> {
    let sigma = || cfg.sigma.as_deref().ok_or_else(|| CliError::Config(format!("`sigma` is required for {}", kind)));
    Ok(match kind {
        KindTag::MmA => ObservableKind::MaximallyMixed,
        KindTag::UnknownZ => ObservableKind::UnknownPair,
        KindTag::KnownM => ObservableKind::KnownState(input(sigma()?, read_state_json)?),
        KindTag::ClassicalM => {
            let path = sigma()?;
            ObservableKind::Classical(classical_reference(&input(path, read_state_json)?, path)?)
        }
    })
}

fn truncate(ens: &ProductEnsemble, t: usize) -> Result<ProductEnsemble, CliError> {
    if t > ens.len() {
        return Err(CliError::Config(format!("`T` = {} exceeds the {} copies supplied", t, ens.len())));
    }
    Ok(ProductEnsemble::new(ens.states()[..t].to_vec())?)
}

/// Kind and instance from the input files, truncated to the first `t` copies.
fn load_instance(cfg: &ExperimentConfig, t: Option<usize>) -> Result<(ObservableKind, Instance), CliError> {
    let kind_tag = cfg.kind()?;
    let states_path = cfg.states.as_deref().ok_or_else(|| CliError::Config("`states` is required".into()))?;
    let ens = input(states_path, read_ensemble_json)?;
    let ens = match t {
        Some(t) => truncate(&ens, t)?,
        None => ens,
    };
    let (kind, inst) = match kind_tag {
        KindTag::UnknownZ => {
            let path = cfg.sigma.as_deref().ok_or_else(|| CliError::Config("`sigma` is required for UNKNOWN_Z".into()))?;
            let other = input(path, read_ensemble_json)?;
            let other = truncate(&other, ens.len())?;
            (ObservableKind::UnknownPair, Instance::Pair { rho: ens, sigma: other })
        }
        KindTag::ClassicalM => {
            let kind = reference_kind(cfg, kind_tag)?;
            let dists = ens
                .to_distributions(DIAGONAL_TOL)
                .map_err(|source| CliError::Input { path: states_path.display().to_string(), source })?;
            (kind, Instance::Classical(dists))
        }
        _ => (reference_kind(cfg, kind_tag)?, Instance::Quantum(ens)),
    };
    let (d, _) = check_instance(&kind, &inst)?;
    if let Some(dim) = cfg.dim {
        if dim != d {
            return Err(CliError::Config(format!("`dim` = {} but the states have dimension {}", dim, d)));
        }
    }
    Ok((kind, inst))
}

fn resolve_theta(cfg: &ExperimentConfig, kind: KindTag, d: usize) -> Result<f64, CliError> {
    match (cfg.theta, cfg.epsilon) {
        (Some(theta), None) => Ok(theta),
        (None, Some(eps)) => Ok(epsilon_to_theta(kind, eps, d)?),
        _ => Err(CliError::Config("exactly one of `theta` or `epsilon` is required".into())),
    }
}

/// Runs `cfg` after filling in defaulted fields, so that the embedded config
/// reproduces the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    match cfg.command()? {
        Command::Verify => run_verify(&mut cfg),
        Command::Moments => run_moments(&cfg),
        Command::Test => run_test(&mut cfg),
        Command::Power => run_power(&mut cfg),
        Command::Divergence => run_divergence(&cfg),
        Command::Calibrate => run_calibrate(&mut cfg),
    }
}

fn suite_table(reports: &[SuiteReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(s, "{} ({} instances, seed {})", r.suite, r.instances, r.seed);
        for c in &r.checks {
            let slack = c.worst_slack.map_or("-".to_string(), |v| format!("{:.3e}", v));
            let status = if c.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "  {:<4} {:<28} evaluated {:>6}  violations {:>5}  worst slack {:>11}  tol {:.0e}",
                status, c.name, c.evaluated, c.violations, slack, c.tolerance
            );
        }
    }
    s
}

fn run_verify(cfg: &mut ExperimentConfig) -> Result<RunOutcome, CliError> {
    let seed = *cfg.seed.get_or_insert(DEFAULT_SEED);
    let instances = *cfg.instances.get_or_insert(DEFAULT_INSTANCES);
    let suites: Vec<Suite> = match cfg.suite {
        Some(s) => vec![s],
        None => Suite::ALL.to_vec(),
    };
    if let Some(name) = &cfg.mutate {
        if !suites.iter().any(|&s| verify::suite_checks(s).iter().any(|c| c.0 == name)) {
            return Err(CliError::Config(format!("`mutate`: no check named {:?} in the selected suites", name)));
        }
    }
    let reports = suites
        .iter()
        .map(|&suite| {
            let mutate = cfg.mutate.clone().filter(|m| verify::suite_checks(suite).iter().any(|c| c.0 == m));
            verify::run(suite, &VerifyOptions { instances, seed, mutate })
        })
        .collect::<noniid::Result<Vec<_>>>()?;
    let passed = reports.iter().all(|r| r.passed());
    Ok(RunOutcome { format: Format::Json, text: envelope(cfg, &reports)?, summary: suite_table(&reports), passed })
}

#[derive(Serialize)]
struct MomentRow {
    #[serde(rename = "T")]
    t: usize,
    mu: f64,
    mean_exact: f64,
    var_exact: f64,
    bias: f64,
    bias_bound: f64,
    var_bound_sum: f64,
    var_bound_calibrated: f64,
}

fn run_moments(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let cal = load_calibration(cfg)?;
    let ts: Vec<Option<usize>> = match &cfg.t {
        Some(t) => t.values().into_iter().map(Some).collect(),
        None => vec![None],
    };
    let reports = ts
        .into_iter()
        .map(|t| {
            let (kind, inst) = load_instance(cfg, t)?;
            Ok(exact_moments(&kind, &inst)?)
        })
        .collect::<Result<Vec<MomentReport>, CliError>>()?;
    let summary = reports
        .iter()
        .map(|r| format!("{} d={} T={}: mu {:.6e}  E {:.6e}  Var {:.6e}\n", r.kind, r.d, r.t, r.mu, r.mean_exact, r.var_exact))
        .collect();
    if matches!(cfg.t, Some(TSpec::Sweep(_))) {
        let rows: Vec<MomentRow> = reports
            .iter()
            .map(|r| MomentRow {
                t: r.t,
                mu: r.mu,
                mean_exact: r.mean_exact,
                var_exact: r.var_exact,
                bias: r.bias,
                bias_bound: r.bias_bound,
                var_bound_sum: r.var_bound_sum(),
                var_bound_calibrated: cal.variance_constant(r.kind) * r.var_bound_sum(),
            })
            .collect();
        let text = csv_preamble(cfg)? + &csv_body(&rows);
        return Ok(RunOutcome { format: Format::Csv, text, summary, passed: true });
    }
    let report = &reports[0];
    let result = MomentsResult { report, variance_constant: cal.variance_constant(report.kind) };
    Ok(RunOutcome { format: Format::Json, text: envelope(cfg, result)?, summary, passed: true })
}

#[derive(Serialize)]
struct MomentsResult<'a> {
    report: &'a MomentReport,
    variance_constant: f64,
}

#[derive(Serialize)]
struct TestResult {
    decision: TestDecision,
    theta: f64,
    /// Copies the calibrated sample-size rule asks for at this `theta`.
    #[serde(rename = "required_T")]
    required_t: usize,
}

fn run_test(cfg: &mut ExperimentConfig) -> Result<RunOutcome, CliError> {
    let seed = *cfg.seed.get_or_insert(DEFAULT_SEED);
    let cal = load_calibration(cfg)?;
    let t = cfg.t.as_ref().map(|t| t.values()[0]);
    let (kind, inst) = load_instance(cfg, t)?;
    let (d, _) = check_instance(&kind, &inst)?;
    let theta = resolve_theta(cfg, kind.tag(), d)?;
    let rule = ChebyshevRule::with_theta(theta)?;
    let decision = run_trial(&kind, &inst, &rule, seed)?;
    let required = required_t(kind.tag(), theta, d, kind.gamma(d), &cal)?;
    let summary = format!(
        "{}: statistic {:.6e} vs threshold {:.6e} (T = {}, required T = {})\n",
        decision.verdict, decision.statistic, decision.threshold, inst.len(), required
    );
    let result = TestResult { decision, theta, required_t: required };
    Ok(RunOutcome { format: Format::Json, text: envelope(cfg, result)?, summary, passed: true })
}

/// Null and far fixture names used by `power` for each kind.
pub fn power_fixture_names(kind: KindTag) -> (&'static str, &'static str) {
    match kind {
        KindTag::MmA => ("orthonormal_tuples", "pairs_far"),
        KindTag::KnownM => ("coherent_pairs", "pairs_far"),
        KindTag::UnknownZ => ("mixed_vs_tuples", "pairs_far_vs_tuples"),
        KindTag::ClassicalM => ("diagonal_pairs", "pairs_far"),
    }
}

fn pick(fixtures: Vec<NamedInstance>, name: &str) -> NamedInstance {
    fixtures.into_iter().find(|f| f.name == name).expect("fixture names are fixed")
}

#[derive(Serialize)]
pub struct PowerRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub theta: f64,
    pub trials: u64,
    pub null_fixture: String,
    pub null_far_count: u64,
    pub null_rate: f64,
    pub null_wilson_low: f64,
    pub null_wilson_high: f64,
    pub far_fixture: String,
    pub far_far_count: u64,
    pub far_rate: f64,
    pub far_wilson_low: f64,
    pub far_wilson_high: f64,
}

impl PowerRow {
    fn new(t: usize, theta: f64, null_name: &str, null: RateEstimate, far_name: &str, far: RateEstimate) -> Self {
        PowerRow {
            t,
            theta,
            trials: null.trials,
            null_fixture: null_name.to_string(),
            null_far_count: null.far_count,
            null_rate: null.far_rate,
            null_wilson_low: null.wilson_low,
            null_wilson_high: null.wilson_high,
            far_fixture: far_name.to_string(),
            far_far_count: far.far_count,
            far_rate: far.far_rate,
            far_wilson_low: far.wilson_low,
            far_wilson_high: far.wilson_high,
        }
    }
}

fn run_power(cfg: &mut ExperimentConfig) -> Result<RunOutcome, CliError> {
    let tag = cfg.kind()?;
    let d = cfg.dim.ok_or_else(|| CliError::Config("`dim` is required for power".into()))?;
    let seed = cfg.seed.ok_or_else(|| CliError::Config("`seed` is required for power".into()))?;
    let trials = *cfg.trials.get_or_insert(DEFAULT_TRIALS);
    let kind = reference_kind(cfg, tag)?;
    if let ObservableKind::KnownState(s) = &kind {
        if s.dim() != d {
            return Err(CliError::Config(format!("`dim` = {} but sigma has dimension {}", d, s.dim())));
        }
    }
    if let ObservableKind::Classical(q) = &kind {
        if q.dim() != d {
            return Err(CliError::Config(format!("`dim` = {} but sigma has dimension {}", d, q.dim())));
        }
    }
    let theta = resolve_theta(cfg, tag, d)?;
    if cfg.t.is_none() {
        let cal = load_calibration(cfg)?;
        cfg.t = Some(TSpec::One(required_t(tag, theta, d, kind.gamma(d), &cal)?));
    }
    let rule = ChebyshevRule::with_theta(theta)?;
    let (null_name, far_name) = power_fixture_names(tag);
    let mut rows = Vec::new();
    let mut summary = String::new();
    for t in cfg.t.as_ref().expect("resolved above").values() {
        let null = pick(null_fixtures(&kind, d, t, seed)?, null_name);
        let far = pick(far_fixtures(&kind, d, t, theta, seed)?, far_name);
        let report = estimate_success(&kind, &null.instance, &far.instance, &rule, trials, seed)?;
        let _ = writeln!(
            summary,
            "T={:<6} null FAR rate {:.4} [{:.4}, {:.4}]  far FAR rate {:.4} [{:.4}, {:.4}]",
            t,
            report.null.far_rate,
            report.null.wilson_low,
            report.null.wilson_high,
            report.far.far_rate,
            report.far.wilson_low,
            report.far.wilson_high
        );
        rows.push(PowerRow::new(t, theta, null_name, report.null, far_name, report.far));
    }
    let text = csv_preamble(cfg)? + &csv_body(&rows);
    Ok(RunOutcome { format: Format::Csv, text, summary, passed: true })
}

#[derive(Serialize)]
struct DivergenceResult {
    quantum: QuantumDivergenceReport,
    /// Distributions on the diagonals, i.e. measured in the computational basis.
    computational_basis: ClassicalDivergenceReport,
}

fn run_divergence(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let rho_path = cfg.states.as_deref().ok_or_else(|| CliError::Config("`states` is required".into()))?;
    let sigma_path = cfg.sigma.as_deref().ok_or_else(|| CliError::Config("`sigma` is required".into()))?;
    let rho = input(rho_path, read_state_json)?;
    let sigma = input(sigma_path, read_state_json)?;
    if let Some(dim) = cfg.dim {
        if dim != rho.dim() {
            return Err(CliError::Config(format!("`dim` = {} but the states have dimension {}", dim, rho.dim())));
        }
    }
    let quantum = quantum_report(&rho, &sigma)?;
    let computational_basis = classical_report(&ClassicalDistribution::from_density(&rho)?, &ClassicalDistribution::from_density(&sigma)?)?;
    let summary = format!(
        "trace distance {:.6e}  infidelity {:.6e}  Bures^2 {:.6e}  Bures chi2 {}\n",
        quantum.trace_distance,
        quantum.infidelity,
        quantum.bures_sq,
        quantum.bures_chi2.as_f64()
    );
    Ok(RunOutcome { format: Format::Json, text: envelope(cfg, DivergenceResult { quantum, computational_basis })?, summary, passed: true })
}

fn calibration_summary(report: &SweepReport) -> String {
    let mut s = String::new();
    for f in &report.sample_fits {
        let _ = writeln!(
            s,
            "{:<12} d={:<4} theta={:<6} T*={:<7} C={:<10} worst error {:.4} ({})",
            f.point.kind, f.point.d, f.point.theta, f.t_star, f.constant, f.worst_error, f.worst_fixture
        );
    }
    for v in &report.variance_fits {
        let _ = writeln!(
            s,
            "{:<12} variance K={:<6} train max ratio {:.4}  held-out max ratio {:.4}",
            v.kind, v.constant, v.train_max_ratio, v.held_out_max_ratio
        );
    }
    for (p, t, e) in &report.validation {
        let _ = writeln!(s, "{:<12} d={:<4} theta={:<6} required T={:<7} worst error {:.4}", p.kind, p.d, p.theta, t, e);
    }
    s
}

fn run_calibrate(cfg: &mut ExperimentConfig) -> Result<RunOutcome, CliError> {
    let n = *cfg.instances.get_or_insert(DEFAULT_CALIBRATION_INSTANCES);
    let (mut cal, report) = calibrate(&default_grid(), &SweepOptions { train_instances: n, held_out_instances: n })?;
    cal.provenance.insert("tool".into(), format!("{} {}", TOOL, noniid::VERSION));
    cal.provenance.insert("config".into(), serde_json::to_string(&*cfg).expect("plain data serializes"));
    let passed = report.variance_fits.iter().all(|v| v.held_out_passes())
        && report.validation.iter().all(|(_, _, e)| *e <= noniid::sweep::TARGET_ERROR);
    Ok(RunOutcome { format: Format::Json, text: cal.to_json() + "\n", summary: calibration_summary(&report), passed })
}

/// Extracts the embedded config from a rendered report.
pub fn embedded_config(text: &str) -> Result<ExperimentConfig, CliError> {
    if let Some(line) = text.lines().find_map(|l| l.strip_prefix("# config ")) {
        return ExperimentConfig::parse(line);
    }
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let cfg = v.get("config").ok_or_else(|| CliError::Config("report has no `config`".into()))?;
    ExperimentConfig::parse(&cfg.to_string())
}
