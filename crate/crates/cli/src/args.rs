//! Command-line flags and their merge into an [`ExperimentConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use noniid::observables::KindTag;
use noniid::verify::Suite;

use crate::config::{Command, ExperimentConfig, TSpec};
use crate::error::CliError;
use crate::run::TOOL;

#[derive(Debug, Parser)]
#[command(name = TOOL, version = noniid::VERSION, about = "Testers for product sources whose copies need not be identical")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Run the randomized invariant suites; exits 3 on any violation.
    Verify(Flags),
    /// Exact mean and variance of the statistic; a `T` list gives a CSV sweep.
    Moments(Flags),
    /// One trial of the tester on the given states.
    Test(Flags),
    /// Null and far rejection rates on built-in fixtures, one CSV row per `T`.
    Power(Flags),
    /// Divergences between two states.
    Divergence(Flags),
    /// Refit the sample-size and variance constants.
    Calibrate(Flags),
    /// Run the command named in a config file.
    Run(Flags),
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON experiment config; flags given alongside override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<KindTag>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of copies, or a comma-separated increasing sweep.
    #[arg(long = "T", value_delimiter = ',')]
    pub t: Vec<usize>,
    #[arg(long, conflicts_with = "epsilon")]
    pub theta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ensemble JSON file.
    #[arg(long)]
    pub states: Option<PathBuf>,
    /// Reference state JSON file, or the second ensemble for UNKNOWN_Z.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Report destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Calibration JSON replacing the built-in constants.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Verify only this suite.
    #[arg(long)]
    pub suite: Option<Suite>,
    /// Random instances per suite (verify) or per kind (calibrate).
    #[arg(long)]
    pub instances: Option<usize>,
    /// Perturb the named check so that it must fail.
    #[arg(long)]
    pub mutate: Option<String>,
}

impl Sub {
    fn parts(&self) -> (Option<Command>, &Flags) {
        match self {
            Sub::Verify(f) => (Some(Command::Verify), f),
            Sub::Moments(f) => (Some(Command::Moments), f),
            Sub::Test(f) => (Some(Command::Test), f),
            Sub::Power(f) => (Some(Command::Power), f),
            Sub::Divergence(f) => (Some(Command::Divergence), f),
            Sub::Calibrate(f) => (Some(Command::Calibrate), f),
            Sub::Run(f) => (None, f),
        }
    }

    /// Config file contents, if any, overridden by flags.
    pub fn to_config(&self) -> Result<ExperimentConfig, CliError> {
        let (command, f) = self.parts();
        let mut cfg = match &f.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| CliError::Read { path: path.display().to_string(), source })?;
                let cfg: ExperimentConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
                cfg
            }
            None => ExperimentConfig::default(),
        };
        match (command, cfg.command) {
            (Some(c), Some(file)) if c != file => {
                return Err(CliError::Config(format!("config is for `{}`, not `{}`", file.as_str(), c.as_str())));
            }
            (Some(c), _) => cfg.command = Some(c),
            (None, None) => return Err(CliError::Config("config names no `command`".into())),
            (None, Some(_)) => {}
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = &f.$field { cfg.$field = Some(v.clone()); })*};
        }
        set!(kind, dim, trials, seed, states, sigma, out, calibration, suite, instances, mutate);
        if let Some(theta) = f.theta {
            cfg.theta = Some(theta);
            cfg.epsilon = None;
        }
        if let Some(eps) = f.epsilon {
            cfg.epsilon = Some(eps);
            cfg.theta = None;
        }
        match f.t.len() {
            0 => {}
            1 => cfg.t = Some(TSpec::One(f.t[0])),
            _ => cfg.t = Some(TSpec::Sweep(f.t.clone())),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
