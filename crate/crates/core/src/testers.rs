//! Decision rule, sample-size selection and single-trial execution.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::observables::{check_instance, classical_from_samples, Instance, KindTag, ObservableKind};
use crate::rng::stream;
use crate::simulate::MeasurementModel;
use crate::states::ClassicalDistribution;

pub const DEFAULT_C: f64 = 0.005;
pub const DEFAULT_K: f64 = 10.0;

/// Threshold test `statistic >= (1 - c) theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevRule {
    pub theta: f64,
    pub c: f64,
    pub k: f64,
}

impl ChebyshevRule {
    pub fn new(theta: f64, c: f64, k: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!("theta must be positive, got {}", theta)));
        }
        if !(c > 0.0 && c < 0.5) {
            return Err(Error::InvalidParameter(format!("c must lie in (0, 1/2), got {}", c)));
        }
        if !(k >= 1.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!("k must be at least 1, got {}", k)));
        }
        Ok(ChebyshevRule { theta, c, k })
    }

    pub fn with_theta(theta: f64) -> Result<Self> {
        Self::new(theta, DEFAULT_C, DEFAULT_K)
    }

    pub fn threshold(&self) -> f64 {
        (1.0 - self.c) * self.theta
    }

    /// Whether exact moments certify the rule at failure probability `1/k^2`:
    /// the bias is within `(c/4)(mu + theta)`, the standard deviation within
    /// `(c/(4k))(mu + theta)`, and `mu` lies outside `((1-2c) theta, theta]`.
    pub fn margins_hold(&self, mu: f64, bias: f64, var: f64) -> bool {
        let scale = mu + self.theta;
        let separated = mu > self.theta || mu <= (1.0 - 2.0 * self.c) * self.theta;
        separated && bias.abs() <= self.c / 4.0 * scale && var.max(0.0).sqrt() <= self.c / (4.0 * self.k) * scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Close,
    Far,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Close => "CLOSE",
            Verdict::Far => "FAR",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub verdict: Verdict,
    pub statistic: f64,
    pub threshold: f64,
    /// `statistic - threshold`.
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindTag>,
    #[serde(rename = "T_used", skip_serializing_if = "Option::is_none")]
    pub t_used: Option<usize>,
}

/// FAR iff `statistic >= (1 - c) theta`; ties go to FAR.
pub fn decide(statistic: f64, rule: &ChebyshevRule) -> TestDecision {
    let threshold = rule.threshold();
    let verdict = if statistic >= threshold { Verdict::Far } else { Verdict::Close };
    TestDecision { verdict, statistic, threshold, margin: statistic - threshold, kind: None, t_used: None }
}

/// Scale factor whose product with the calibrated constant gives `T`.
pub fn sample_scale(kind: KindTag, theta: f64, d: usize, gamma: f64) -> f64 {
    let df = d as f64;
    match kind {
        KindTag::MmA | KindTag::UnknownZ => 1.0 / theta,
        KindTag::KnownM => (df / theta).max(df.sqrt() / (theta * gamma).sqrt()),
        KindTag::ClassicalM => (df.sqrt() / theta).max(1.0 / (theta * gamma).sqrt()),
    }
}

/// Number of copies needed at closeness parameter `theta`.
pub fn required_t(kind: KindTag, theta: f64, d: usize, gamma: f64, cal: &Calibration) -> Result<usize> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("theta must be positive, got {}", theta)));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    if matches!(kind, KindTag::KnownM | KindTag::ClassicalM) && !(gamma > 0.0) {
        return Err(Error::InvalidParameter("reference must have full support".into()));
    }
    let c = cal.sample_constant(kind);
    let t = (c * sample_scale(kind, theta, d, gamma) - 1e-9).ceil();
    if !t.is_finite() || t > 1e12 {
        return Err(Error::InvalidParameter(format!("required T is unbounded for theta = {}", theta)));
    }
    Ok((t as usize).max(1))
}

/// Closeness parameter that guarantees trace (or total variation) distance
/// at least `epsilon` is detected.
pub fn epsilon_to_theta(kind: KindTag, epsilon: f64, d: usize) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1], got {}", epsilon)));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let e2 = epsilon * epsilon;
    Ok(match kind {
        KindTag::MmA | KindTag::UnknownZ => 4.0 * e2 / d as f64,
        KindTag::KnownM => e2 / 1.01,
        KindTag::ClassicalM => 4.0 * e2 / 1.01,
    })
}

/// One sample from each of the two draws of every copy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassicalSampleBatch {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

pub fn sample_classical(dists: &[ClassicalDistribution], rng: &mut impl Rng) -> ClassicalSampleBatch {
    let mut first = Vec::with_capacity(dists.len());
    let mut second = Vec::with_capacity(dists.len());
    for p in dists {
        first.push(p.sample(rng));
        second.push(p.sample(rng));
    }
    ClassicalSampleBatch { first, second }
}

/// `(1/T^2) sum_{s,t} 1[J1_s = J2_t] / q_{J1_s} - 1`.
pub fn classical_statistic(batch: &ClassicalSampleBatch, q: &ClassicalDistribution) -> Result<f64> {
    if batch.first.len() != batch.second.len() || batch.first.is_empty() {
        return Err(Error::InvalidParameter("batch needs equally many first and second samples".into()));
    }
    if let Some(&j) = batch.first.iter().chain(&batch.second).find(|&&j| j >= q.dim()) {
        return Err(Error::IndexOutOfRange(format!("sample {} outside a support of size {}", j, q.dim())));
    }
    Ok(classical_from_samples(&batch.first, &batch.second, q.probs()))
}

#[derive(Clone, Debug)]
enum Engine {
    Quantum(MeasurementModel),
    Classical { q: ClassicalDistribution, dists: Vec<ClassicalDistribution> },
}

/// Tester bound to one instance, ready to run many seeded trials.
#[derive(Clone, Debug)]
pub struct PreparedTester {
    kind: KindTag,
    t: usize,
    rule: ChebyshevRule,
    engine: Engine,
}

impl PreparedTester {
    pub fn new(kind: &ObservableKind, inst: &Instance, rule: ChebyshevRule) -> Result<Self> {
        let (_, t) = check_instance(kind, inst)?;
        let engine = match (kind, inst) {
            (ObservableKind::Classical(q), Instance::Classical(p)) => Engine::Classical { q: q.clone(), dists: p.clone() },
            _ => Engine::Quantum(MeasurementModel::for_instance(kind, inst)?),
        };
        Ok(PreparedTester { kind: kind.tag(), t, rule, engine })
    }

    pub fn rule(&self) -> &ChebyshevRule {
        &self.rule
    }

    /// One trial driven by a `ChaCha8Rng` seeded from `seed`.
    pub fn run_seeded(&self, seed: u64) -> TestDecision {
        let mut rng = stream(seed, 0);
        let statistic = match &self.engine {
            Engine::Quantum(m) => m.sample(&mut rng),
            Engine::Classical { q, dists } => {
                let batch = sample_classical(dists, &mut rng);
                classical_from_samples(&batch.first, &batch.second, q.probs())
            }
        };
        TestDecision { kind: Some(self.kind), t_used: Some(self.t), ..decide(statistic, &self.rule) }
    }

    /// Exact probability of a FAR verdict, available when the quantum
    /// outcome distribution is cached.
    pub fn exact_far_probability(&self) -> Option<f64> {
        match &self.engine {
            Engine::Quantum(m) => m.prob_at_least(self.rule.threshold()),
            Engine::Classical { .. } => None,
        }
    }

    pub fn model(&self) -> Option<&MeasurementModel> {
        match &self.engine {
            Engine::Quantum(m) => Some(m),
            Engine::Classical { .. } => None,
        }
    }
}

/// Prepares a tester and runs a single trial.
pub fn run_trial(kind: &ObservableKind, inst: &Instance, rule: &ChebyshevRule, seed: u64) -> Result<TestDecision> {
    Ok(PreparedTester::new(kind, inst, *rule)?.run_seeded(seed))
}
