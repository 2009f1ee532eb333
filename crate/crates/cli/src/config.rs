//! Experiment configuration: one JSON object per run, also built from flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use noniid::observables::KindTag;
use noniid::verify::Suite;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Verify,
    Moments,
    Test,
    Power,
    Divergence,
    Calibrate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Moments => "moments",
            Command::Test => "test",
            Command::Power => "power",
            Command::Divergence => "divergence",
            Command::Calibrate => "calibrate",
        }
    }
}

/// A single number of copies or a strictly increasing sweep.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TSpec {
    One(usize),
    Sweep(Vec<usize>),
}

impl TSpec {
    pub fn values(&self) -> Vec<usize> {
        match self {
            TSpec::One(t) => vec![*t],
            TSpec::Sweep(ts) => ts.clone(),
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, TSpec::Sweep(_))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<TSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Ensemble file: the tested copies, or the first side for `UNKNOWN_Z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<PathBuf>,
    /// Reference state file, or the second ensemble for `UNKNOWN_Z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<Suite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutate: Option<String>,
}

/// Trials per power point when the config leaves it out.
pub const DEFAULT_TRIALS: u64 = 400;
/// Random instances per verify suite when the config leaves it out.
pub const DEFAULT_INSTANCES: usize = 500;
/// Seed for commands that may run without one.
pub const DEFAULT_SEED: u64 = 0;

fn malformed(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn command(&self) -> Result<Command, CliError> {
        self.command.ok_or_else(|| malformed("field `command` is required"))
    }

    pub fn kind(&self) -> Result<KindTag, CliError> {
        self.kind.ok_or_else(|| malformed(format!("field `kind` is required for {}", self.command.map_or("this command", |c| c.as_str()))))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let command = self.command()?;
        if self.theta.is_some() && self.epsilon.is_some() {
            return Err(malformed("`theta` and `epsilon` are mutually exclusive"));
        }
        if let Some(theta) = self.theta {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(malformed(format!("`theta` must be positive, got {}", theta)));
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(malformed(format!("`epsilon` must lie in (0, 1], got {}", eps)));
            }
        }
        if let Some(t) = &self.t {
            let ts = t.values();
            if ts.is_empty() {
                return Err(malformed("`T` sweep is empty"));
            }
            if ts.contains(&0) {
                return Err(malformed("`T` entries must be positive"));
            }
            if ts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(malformed("`T` sweep must be strictly increasing"));
            }
        }
        if self.dim == Some(0) {
            return Err(malformed("`dim` must be positive"));
        }
        if self.trials == Some(0) {
            return Err(malformed("`trials` must be positive"));
        }
        if self.instances == Some(0) {
            return Err(malformed("`instances` must be positive"));
        }
        match command {
            Command::Power => {
                self.kind()?;
                if self.dim.is_none() {
                    return Err(malformed("`dim` is required for power"));
                }
                if self.seed.is_none() {
                    return Err(malformed("`seed` is required for power"));
                }
                self.require_closeness()?;
            }
            Command::Test => {
                self.kind()?;
                self.require_closeness()?;
                self.require_states()?;
                if matches!(&self.t, Some(t) if t.is_sweep()) {
                    return Err(malformed("`test` takes a single `T`"));
                }
            }
            Command::Moments => {
                self.kind()?;
                self.require_states()?;
            }
            Command::Divergence => {
                self.require_states()?;
                if self.sigma.is_none() {
                    return Err(malformed("`sigma` is required for divergence"));
                }
            }
            Command::Verify | Command::Calibrate => {}
        }
        if self.mutate.is_some() && command != Command::Verify {
            return Err(malformed("`mutate` only applies to verify"));
        }
        if self.suite.is_some() && command != Command::Verify {
            return Err(malformed("`suite` only applies to verify"));
        }
        Ok(())
    }

    fn require_closeness(&self) -> Result<(), CliError> {
        if self.theta.is_none() && self.epsilon.is_none() {
            return Err(malformed("one of `theta` or `epsilon` is required"));
        }
        Ok(())
    }

    fn require_states(&self) -> Result<(), CliError> {
        if self.states.is_none() {
            return Err(malformed("`states` is required"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_number_or_list_for_t() {
        let one = ExperimentConfig::parse(r#"{"command":"power","kind":"MM_A","dim":2,"T":8,"theta":0.25,"seed":1}"#).unwrap();
        assert_eq!(one.t, Some(TSpec::One(8)));
        let many = ExperimentConfig::parse(r#"{"command":"power","kind":"MM_A","dim":2,"T":[4,8],"theta":0.25,"seed":1}"#).unwrap();
        assert_eq!(many.t, Some(TSpec::Sweep(vec![4, 8])));
    }

    #[test]
    fn rejects_malformed() {
        for text in [
            r#"{"command":"power","kind":"MM_A","dim":2,"T":[8,4],"theta":0.25,"seed":1}"#,
            r#"{"command":"power","kind":"MM_A","dim":2,"T":8,"theta":0.25,"epsilon":0.1,"seed":1}"#,
            r#"{"command":"power","kind":"MM_A","dim":2,"T":8,"theta":0.25}"#,
            r#"{"command":"power","kind":"MM_A","dim":2,"T":8,"theta":0.25,"seed":1,"extra":true}"#,
            r#"{"command":"launch"}"#,
            r#"{"command":"verify","mutate":"qes","trials":0}"#,
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(CliError::Config(_))), "{}", text);
        }
    }

    #[test]
    fn round_trips() {
        let cfg = ExperimentConfig::parse(r#"{"command":"verify","suite":"efron-stein","instances":3,"seed":9}"#).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_json()).unwrap(), cfg);
    }
}
