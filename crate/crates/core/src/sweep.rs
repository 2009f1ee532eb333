//! Sweeps that produce the frozen calibration constants.
//!
//! Sample constants: for each grid point the smallest `T` at which every
//! null and far fixture is decided correctly with error at most
//! [`TARGET_ERROR`] is found, and the constant is the largest `T / scale`
//! over the grid. The error of a fixture is either read off the exact outcome
//! distribution of the measurement or bounded by the one-sided Chebyshev
//! inequality from the exact mean and variance.
//!
//! Variance constants: the largest ratio of exact variance to the bound terms
//! over a training suite of random instances, times [`VARIANCE_HEADROOM`],
//! rounded up to two significant digits, then checked on a held-out suite.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::error::{Error, Result};
use crate::fixtures::{far_fixtures, null_fixtures, random_instance, two_level_distribution, NamedInstance};
use crate::observables::{exact_moments, KindTag, ObservableKind};
use crate::rng::{hash64, stream};
use crate::states::{ClassicalDistribution, DensityMatrix};
use crate::testers::{required_t, sample_scale, ChebyshevRule, PreparedTester};

pub const TARGET_ERROR: f64 = 0.01;
pub const VARIANCE_HEADROOM: f64 = 1.5;
pub const FIXTURE_SEED: u64 = 1;
pub const TRAIN_SEED: u64 = 0x7472_6169_6e;
pub const HELD_OUT_SEED: u64 = 0x6865_6c64;
/// Largest `T` tried by the Chebyshev search.
pub const MAX_SEARCH_T: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMethod {
    /// Exact outcome distribution, scanning `T = 1, 2, ..` up to a limit.
    ExactDistribution { max_t: usize },
    /// One-sided Chebyshev bound from the exact moments, by bisection.
    Cantelli,
}

/// One calibration point. `reference` is the spectrum of the reference state
/// (or the reference distribution) for the kinds that have one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub kind: KindTag,
    pub d: usize,
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
    pub method: ErrorMethod,
}

impl SamplePoint {
    pub fn observable_kind(&self) -> Result<ObservableKind> {
        let reference = || {
            self.reference.clone().ok_or_else(|| Error::InvalidParameter(format!("{} needs a reference spectrum", self.kind)))
        };
        Ok(match self.kind {
            KindTag::MmA => ObservableKind::MaximallyMixed,
            KindTag::UnknownZ => ObservableKind::UnknownPair,
            KindTag::KnownM => ObservableKind::KnownState(DensityMatrix::diagonal(&reference()?)?),
            KindTag::ClassicalM => ObservableKind::Classical(ClassicalDistribution::new(reference()?)?),
        })
    }
}

/// The calibration grid.
pub fn default_grid() -> Vec<SamplePoint> {
    let point = |kind, d, theta, reference: Option<Vec<f64>>, method| SamplePoint { kind, d, theta, reference, method };
    let two_level = |d: usize| Some(two_level_distribution(d).probs().to_vec());
    vec![
        point(KindTag::MmA, 2, 0.25, None, ErrorMethod::ExactDistribution { max_t: 12 }),
        point(KindTag::KnownM, 2, 0.5, Some(vec![0.75, 0.25]), ErrorMethod::Cantelli),
        point(KindTag::KnownM, 2, 0.25, Some(vec![0.75, 0.25]), ErrorMethod::Cantelli),
        point(KindTag::KnownM, 3, 0.3, Some(vec![0.5, 0.3, 0.2]), ErrorMethod::Cantelli),
        point(KindTag::UnknownZ, 2, 0.25, None, ErrorMethod::Cantelli),
        point(KindTag::UnknownZ, 2, 0.1, None, ErrorMethod::Cantelli),
        point(KindTag::UnknownZ, 3, 0.2, None, ErrorMethod::Cantelli),
        point(KindTag::ClassicalM, 200, 0.5, two_level(200), ErrorMethod::Cantelli),
        point(KindTag::ClassicalM, 20, 0.25, two_level(20), ErrorMethod::Cantelli),
    ]
}

/// Error probability of one fixture: `P(FAR)` for a null fixture and
/// `P(CLOSE)` for a far one.
fn fixture_error(kind: &ObservableKind, f: &NamedInstance, rule: ChebyshevRule, far: bool, method: ErrorMethod) -> Result<f64> {
    match method {
        ErrorMethod::ExactDistribution { .. } => {
            let tester = PreparedTester::new(kind, &f.instance, rule)?;
            let p = tester
                .exact_far_probability()
                .ok_or_else(|| Error::InvalidParameter("exact distribution needs a quantum kind".into()))?;
            Ok(if far { 1.0 - p } else { p })
        }
        ErrorMethod::Cantelli => {
            let m = exact_moments(kind, &f.instance)?;
            let gap = if far { m.mean_exact - rule.threshold() } else { rule.threshold() - m.mean_exact };
            Ok(if gap <= 0.0 { 1.0 } else { m.var_exact / (m.var_exact + gap * gap) })
        }
    }
}

/// Worst error over the null and far fixtures at `t`.
pub fn worst_error(point: &SamplePoint, t: usize) -> Result<(f64, String)> {
    let kind = point.observable_kind()?;
    let rule = ChebyshevRule::with_theta(point.theta)?;
    let mut worst = (0.0, String::new());
    let null = null_fixtures(&kind, point.d, t, FIXTURE_SEED)?;
    let far = far_fixtures(&kind, point.d, t, point.theta, FIXTURE_SEED)?;
    for (f, is_far) in null.iter().map(|f| (f, false)).chain(far.iter().map(|f| (f, true))) {
        let e = fixture_error(&kind, f, rule, is_far, point.method)?;
        if e >= worst.0 {
            worst = (e, f.name.clone());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFit {
    pub point: SamplePoint,
    pub gamma: f64,
    pub scale: f64,
    /// Smallest passing `T` found by the search.
    pub t_star: usize,
    pub constant: f64,
    pub worst_error: f64,
    pub worst_fixture: String,
}

/// Smallest `T` meeting [`TARGET_ERROR`] at `point`.
pub fn fit_sample_point(point: &SamplePoint) -> Result<SampleFit> {
    let passes = |t: usize| -> Result<Option<(f64, String)>> {
        let w = worst_error(point, t)?;
        Ok(if w.0 <= TARGET_ERROR { Some(w) } else { None })
    };
    let (t_star, (err, name)) = match point.method {
        ErrorMethod::ExactDistribution { max_t } => {
            let mut found = None;
            for t in 1..=max_t {
                if let Some(w) = passes(t)? {
                    found = Some((t, w));
                    break;
                }
            }
            found.ok_or_else(|| Error::Unattainable(format!("no T <= {} meets the target error", max_t)))?
        }
        ErrorMethod::Cantelli => {
            let mut hi = 1;
            let mut best = loop {
                if let Some(w) = passes(hi)? {
                    break w;
                }
                if hi >= MAX_SEARCH_T {
                    return Err(Error::Unattainable(format!("no T <= {} meets the target error", MAX_SEARCH_T)));
                }
                hi *= 2;
            };
            let mut lo = hi / 2;
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                match passes(mid)? {
                    Some(w) => {
                        hi = mid;
                        best = w;
                    }
                    None => lo = mid,
                }
            }
            (hi, best)
        }
    };
    let kind = point.observable_kind()?;
    let gamma = kind.gamma(point.d);
    let scale = sample_scale(point.kind, point.theta, point.d, gamma);
    Ok(SampleFit {
        point: point.clone(),
        gamma,
        scale,
        t_star,
        constant: t_star as f64 / scale,
        worst_error: err,
        worst_fixture: name,
    })
}

/// Random instance used by the variance sweeps: `d` in `2..=4` (up to 6 for
/// the classical kind) and `T` in `1..=12`.
pub fn variance_instance(tag: KindTag, seed: u64) -> Result<(ObservableKind, crate::observables::Instance)> {
    let mut rng = stream(seed, 1);
    let d_max = if tag == KindTag::ClassicalM { 6 } else { 4 };
    let d = rng.random_range(2..=d_max);
    let t = rng.random_range(1..=12);
    random_instance(tag, d, t, seed)
}

/// `Var / (sum of bound terms)` on one random instance.
pub fn variance_ratio(tag: KindTag, seed: u64) -> Result<f64> {
    let (kind, inst) = variance_instance(tag, seed)?;
    let m = exact_moments(&kind, &inst)?;
    Ok(m.var_exact / m.var_bound_sum())
}

/// Largest ratio over `n` instances seeded from `base`.
pub fn max_variance_ratio(tag: KindTag, n: usize, base: u64) -> Result<f64> {
    let ratios: Vec<f64> =
        (0..n as u64).into_par_iter().map(|i| variance_ratio(tag, hash64(base, i))).collect::<Result<_>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Rounds up to two significant digits.
pub fn round_up_2sig(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let e = x.log10().floor() as i32 - 1;
    let digits = (x / 10f64.powi(e)).ceil();
    if e >= 0 {
        digits * 10f64.powi(e)
    } else {
        digits / 10f64.powi(-e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    pub kind: KindTag,
    pub train_instances: usize,
    pub train_max_ratio: f64,
    pub constant: f64,
    pub held_out_instances: usize,
    pub held_out_max_ratio: f64,
}

impl VarianceFit {
    pub fn held_out_passes(&self) -> bool {
        self.held_out_max_ratio <= self.constant
    }
}

pub fn fit_variance_constant(tag: KindTag, train: usize, held_out: usize) -> Result<VarianceFit> {
    let train_max_ratio = max_variance_ratio(tag, train, hash64(TRAIN_SEED, tag as u64))?;
    let constant = round_up_2sig(VARIANCE_HEADROOM * train_max_ratio);
    let held_out_max_ratio = max_variance_ratio(tag, held_out, hash64(HELD_OUT_SEED, tag as u64))?;
    Ok(VarianceFit { kind: tag, train_instances: train, train_max_ratio, constant, held_out_instances: held_out, held_out_max_ratio })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub train_instances: usize,
    pub held_out_instances: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { train_instances: 20_000, held_out_instances: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sample_fits: Vec<SampleFit>,
    pub variance_fits: Vec<VarianceFit>,
    /// Required `T` and worst error at every grid point under the result.
    pub validation: Vec<(SamplePoint, usize, f64)>,
}

/// Runs every sweep and returns the resulting calibration.
pub fn calibrate(grid: &[SamplePoint], opts: &SweepOptions) -> Result<(Calibration, SweepReport)> {
    let sample_fits: Vec<SampleFit> = grid.iter().map(fit_sample_point).collect::<Result<_>>()?;
    let mut sample_constants = BTreeMap::new();
    for f in &sample_fits {
        let c = sample_constants.entry(f.point.kind).or_insert(0.0f64);
        *c = c.max(f.constant);
    }
    for k in KindTag::ALL {
        if !sample_constants.contains_key(&k) {
            return Err(Error::InvalidParameter(format!("grid has no point for {}", k)));
        }
    }
    let variance_fits: Vec<VarianceFit> = KindTag::ALL
        .iter()
        .map(|&k| fit_variance_constant(k, opts.train_instances, opts.held_out_instances))
        .collect::<Result<_>>()?;
    let variance_constants = variance_fits.iter().map(|f| (f.kind, f.constant)).collect();
    let mut provenance = BTreeMap::new();
    provenance.insert(
        "sample_constants".to_string(),
        format!(
            "max over the grid of T*/scale, T* the smallest T with worst fixture error <= {} (exact distribution for MM_A, one-sided Chebyshev from exact moments otherwise), fixture seed {}",
            TARGET_ERROR, FIXTURE_SEED
        ),
    );
    provenance.insert(
        "variance_constants".to_string(),
        format!(
            "{} x max Var/bound over {} training instances, rounded up to 2 significant digits; checked on {} held-out instances",
            VARIANCE_HEADROOM, opts.train_instances, opts.held_out_instances
        ),
    );
    let cal = Calibration { version: 1, sample_constants, variance_constants, provenance };
    let mut validation = Vec::new();
    for p in grid {
        let kind = p.observable_kind()?;
        let t = required_t(p.kind, p.theta, p.d, kind.gamma(p.d), &cal)?;
        validation.push((p.clone(), t, worst_error(p, t)?.0));
    }
    Ok((cal, SweepReport { sample_fits, variance_fits, validation }))
}
