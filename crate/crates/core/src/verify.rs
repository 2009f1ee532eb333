//! Randomized invariant suites with a per-check table of worst slacks.
//!
//! Every check reduces an instance to a normalized slack
//! `(rhs - lhs) / max(1, |lhs|, |rhs|)`; identities use `-error`. A check
//! fails when any slack falls below minus its tolerance. A mutation names one
//! check whose slack must instead exceed [`MUTATION_MARGIN`].

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::distances::{classical_report, quantum_report, ExtendedReal, QuantumDivergenceReport};
use crate::efronstein::{
    es_decompose, es_marginalize, es_marginalize_iterated, inner_product, local_variance_routes, qes_check,
    two_local_bound, variance, ESContext, Subset,
};
use crate::error::{Error, Result};
use crate::fixtures::{random_family, random_instance, random_reference};
use crate::matcore::{tensor_all, ComplexMatrix, C64};
use crate::observables::{concavity_deficit, exact_moments, misc_inequalities, KindTag};
use crate::rng::{hash64, stream};
use crate::states::{
    complex_gaussian, depolarize, haar_unitary, random_state, ClassicalDistribution, DensityMatrix, GenerationMode,
};

/// Slack a mutated check must reach on every instance.
pub const MUTATION_MARGIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    EfronStein,
    Distances,
    Observables,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::EfronStein, Suite::Distances, Suite::Observables];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::EfronStein => "efron-stein",
            Suite::Distances => "distances",
            Suite::Observables => "observables",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown suite `{}`", s)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub instances: usize,
    pub seed: u64,
    /// Name of a check to perturb.
    pub mutate: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub tolerance: f64,
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest slack seen; absent when the check never applied.
    pub worst_slack: Option<f64>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Normalized slack of `lhs <= rhs`.
pub fn slack(lhs: f64, rhs: f64) -> f64 {
    (rhs - lhs) / 1f64.max(lhs.abs()).max(rhs.abs())
}

/// Normalized slack of the identity `a == b`.
pub fn identity_slack(a: f64, b: f64) -> f64 {
    -(a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

type Samples = Vec<(&'static str, f64)>;

struct Tally {
    tolerances: BTreeMap<&'static str, f64>,
    order: Vec<&'static str>,
    results: BTreeMap<&'static str, CheckResult>,
}

impl Tally {
    fn new(checks: &[(&'static str, f64)]) -> Self {
        Tally {
            tolerances: checks.iter().copied().collect(),
            order: checks.iter().map(|c| c.0).collect(),
            results: checks
                .iter()
                .map(|&(n, tol)| {
                    (n, CheckResult { name: n.to_string(), tolerance: tol, evaluated: 0, violations: 0, worst_slack: None })
                })
                .collect(),
        }
    }

    fn add(&mut self, samples: &Samples, mutate: Option<&str>) {
        for &(name, s) in samples {
            let tol = self.tolerances[name];
            let r = self.results.get_mut(name).expect("registered check");
            r.evaluated += 1;
            r.worst_slack = Some(r.worst_slack.map_or(s, |w| w.min(s)));
            let bad = if mutate == Some(name) { !(s >= MUTATION_MARGIN) } else { !(s >= -tol) };
            if bad {
                r.violations += 1;
            }
        }
    }

    fn finish(mut self, suite: Suite, opts: &VerifyOptions) -> SuiteReport {
        let checks = self.order.iter().map(|n| self.results.remove(n).expect("registered check")).collect();
        SuiteReport { suite, seed: opts.seed, instances: opts.instances, checks }
    }
}

fn run_suite(
    suite: Suite,
    checks: &[(&'static str, f64)],
    opts: &VerifyOptions,
    one: impl Fn(u64) -> Result<Samples> + Sync,
) -> Result<SuiteReport> {
    if let Some(m) = &opts.mutate {
        if !checks.iter().any(|c| c.0 == m) && !Suite::ALL.iter().any(|&s| suite_checks(s).iter().any(|c| c.0 == m)) {
            return Err(Error::InvalidParameter(format!("unknown check `{}`", m)));
        }
    }
    let per: Vec<Samples> =
        (0..opts.instances as u64).into_par_iter().map(|i| one(hash64(opts.seed, i))).collect::<Result<_>>()?;
    let mut tally = Tally::new(checks);
    for s in &per {
        tally.add(s, opts.mutate.as_deref());
    }
    Ok(tally.finish(suite, opts))
}

/// Names and tolerances of the checks in `suite`.
pub fn suite_checks(suite: Suite) -> &'static [(&'static str, f64)] {
    match suite {
        Suite::EfronStein => ES_CHECKS,
        Suite::Distances => DISTANCE_CHECKS,
        Suite::Observables => OBSERVABLE_CHECKS,
    }
}

pub fn run(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    match suite {
        Suite::EfronStein => run_suite(suite, ES_CHECKS, opts, es_instance),
        Suite::Distances => run_suite(suite, DISTANCE_CHECKS, opts, distance_instance),
        Suite::Observables => {
            let cal = Calibration::builtin();
            run_suite(suite, OBSERVABLE_CHECKS, opts, |seed| observable_instance(seed, &cal))
        }
    }
}

const ES_CHECKS: &[(&str, f64)] = &[
    ("es_reconstruction", 1e-10),
    ("es_orthogonality", 1e-10),
    ("es_annihilation", 1e-10),
    ("es_parseval", 1e-9),
    ("es_variance_sum", 1e-9),
    ("es_local_variance_sum", 1e-9),
    ("es_local_variance_routes", 1e-9),
    ("es_iterated_marginal", 1e-10),
    ("qes", 1e-9),
    ("two_local", 1e-9),
];

fn random_hermitian(dim: usize, rng: &mut rand_chacha::ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng)).hermitian_part()
}

/// Random product state on `1..=4` factors with local dimensions in `2..=3`
/// and a random Hermitian observable.
pub fn random_es_case(seed: u64) -> Result<(ESContext, ComplexMatrix)> {
    let mut rng = stream(seed, 0);
    let n = rng.random_range(1..=4);
    let states: Vec<DensityMatrix> = (0..n)
        .map(|_| {
            let d = rng.random_range(2..=3);
            let mode = match rng.random_range(0..3) {
                0 => GenerationMode::HaarPure,
                1 => GenerationMode::GinibreMixed,
                _ => GenerationMode::DiagonalDirichlet,
            };
            random_state(d, mode, &mut rng)
        })
        .collect();
    let ctx = ESContext::new(states)?;
    let x = random_hermitian(ctx.space().total_dim(), &mut rng);
    Ok((ctx, x))
}

fn es_instance(seed: u64) -> Result<Samples> {
    let (ctx, x) = random_es_case(seed)?;
    let n = ctx.n();
    let mut out: Samples = Vec::new();
    let scale = x.max_abs().max(1.0);
    let comps = es_decompose(&x, &ctx)?;
    let mut sum = ComplexMatrix::zeros(x.rows(), x.cols());
    for c in &comps {
        sum += c;
    }
    out.push(("es_reconstruction", -(&sum - &x).max_abs() / scale));
    let norm2 = |a: &ComplexMatrix, b: &ComplexMatrix| -> Result<C64> { inner_product(a, b, &ctx) };
    let mut worst_orth: f64 = 0.0;
    let mut worst_ann: f64 = 0.0;
    let mut parseval = 0.0;
    let mut nonconstant = 0.0;
    let mut local = vec![0.0; n];
    let sq = norm2(&x, &x)?.re;
    for j in Subset::all(n) {
        let cj = &comps[j.0 as usize];
        let e = norm2(cj, cj)?.re;
        parseval += e;
        if !j.is_empty() {
            nonconstant += e;
        }
        for i in j.indices() {
            local[i] += e;
            worst_ann = worst_ann.max(es_marginalize(cj, &ctx, &[i])?.max_abs());
        }
        for k in Subset::all(n).filter(|k| k.0 > j.0) {
            worst_orth = worst_orth.max(norm2(cj, &comps[k.0 as usize])?.norm());
        }
    }
    out.push(("es_orthogonality", -worst_orth / sq.max(1.0)));
    out.push(("es_annihilation", -worst_ann / scale));
    out.push(("es_parseval", identity_slack(sq, parseval)));
    let var = variance(&x, &ctx)?;
    out.push(("es_variance_sum", identity_slack(var, nonconstant)));
    for (i, &li) in local.iter().enumerate() {
        let routes = local_variance_routes(&x, &ctx, i)?;
        out.push(("es_local_variance_sum", identity_slack(routes.via_difference, li)));
        out.push(("es_local_variance_routes", identity_slack(routes.via_difference, routes.via_swap)));
    }
    let full: Vec<usize> = (0..n).collect();
    let single = es_marginalize(&x, &ctx, &full)?;
    let iterated = es_marginalize_iterated(&x, &ctx, &full)?;
    out.push(("es_iterated_marginal", -(&single - &iterated).max_abs() / scale));
    let q = qes_check(&x, &ctx)?;
    out.push(("qes", slack(q.variance, q.sum_local)));
    if n >= 2 {
        let mut rng = stream(seed, 1);
        let mut terms = BTreeMap::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.random_bool(0.7) {
                    terms.insert((a, b), pair_term(&ctx, a, b, &mut rng)?);
                }
            }
        }
        if !terms.is_empty() {
            let r = two_local_bound(&terms, &ctx)?;
            out.push(("two_local", slack(r.variance, r.bound)));
        }
    }
    Ok(out)
}

/// Random Hermitian operator acting on factors `a` and `b` only.
fn pair_term(ctx: &ESContext, a: usize, b: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<ComplexMatrix> {
    let dims = ctx.space().dims();
    let (da, db) = (dims[a], dims[b]);
    let local = random_hermitian(da * db, rng);
    let mut out = ComplexMatrix::zeros(ctx.space().total_dim(), ctx.space().total_dim());
    let unit = |d: usize, i: usize, j: usize| {
        ComplexMatrix::from_fn(d, d, |r, c| if r == i && c == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
    };
    for ia in 0..da {
        for ja in 0..da {
            for ib in 0..db {
                for jb in 0..db {
                    let factors: Vec<ComplexMatrix> = dims
                        .iter()
                        .enumerate()
                        .map(|(k, &d)| match k {
                            _ if k == a => unit(d, ia, ja),
                            _ if k == b => unit(d, ib, jb),
                            _ => ComplexMatrix::identity(d),
                        })
                        .collect();
                    out += &tensor_all(factors.iter()).scale_complex(local[(ia * db + ib, ja * db + jb)]);
                }
            }
        }
    }
    Ok(out)
}

const DISTANCE_CHECKS: &[(&str, f64)] = &[
    ("dtr_sq_le_infid", 1e-9),
    ("half_bures_sq_le_dtr", 1e-9),
    ("infid_le_bures_sq", 1e-9),
    ("bures_sq_le_two_infid", 1e-9),
    ("bures_sq_le_bures_chi2", 1e-9),
    ("bures_chi2_le_upper", 1e-9),
    ("hs_lower_sandwich", 1e-9),
    ("hs_upper_sandwich", 1e-9),
    ("unitary_invariance", 1e-9),
    ("classical_chi2_ge_4tv_sq", 1e-9),
    ("hellinger_sq_le_2tv", 1e-9),
];

/// Random pair of states of dimension `2..=6` drawn from a mix of
/// generators, including equal, nearby, pure and rank-deficient cases.
pub fn random_state_pair(seed: u64) -> (DensityMatrix, DensityMatrix) {
    let mut rng = stream(seed, 0);
    let d = rng.random_range(2..=6);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mode = match rng.random_range(0..3) {
            0 => GenerationMode::HaarPure,
            1 => GenerationMode::GinibreMixed,
            _ => GenerationMode::DiagonalDirichlet,
        };
        random_state(d, mode, rng)
    };
    let sigma = pick(&mut rng);
    let rho = match rng.random_range(0..5) {
        0 => sigma.clone(),
        1 => {
            let other = pick(&mut rng);
            let s = rng.random_range(0.0..0.2);
            DensityMatrix::from_trusted(&sigma.matrix().scale(1.0 - s) + &other.matrix().scale(s)).expect("convex mixture")
        }
        2 => depolarize(&sigma, rng.random_range(0.0..=1.0)).expect("lambda in range"),
        _ => pick(&mut rng),
    };
    if rng.random_bool(0.5) {
        (rho, sigma)
    } else {
        (sigma, rho)
    }
}

fn report_values(r: &QuantumDivergenceReport) -> Vec<Option<f64>> {
    vec![
        Some(r.trace_distance),
        Some(r.hs_sq),
        Some(r.fidelity),
        r.bures_chi2.finite(),
        r.chi2_upper.finite(),
    ]
}

fn distance_instance(seed: u64) -> Result<Samples> {
    let (rho, sigma) = random_state_pair(seed);
    let d = rho.dim() as f64;
    let r = quantum_report(&rho, &sigma)?;
    let dtr2 = r.trace_distance * r.trace_distance;
    let mut out: Samples = vec![
        ("dtr_sq_le_infid", slack(dtr2, r.infidelity)),
        ("half_bures_sq_le_dtr", slack(0.5 * r.bures_sq, r.trace_distance)),
        ("infid_le_bures_sq", slack(r.infidelity, r.bures_sq)),
        ("bures_sq_le_two_infid", slack(r.bures_sq, 2.0 * r.infidelity)),
        ("hs_lower_sandwich", slack(0.25 * r.hs_sq, dtr2)),
        ("hs_upper_sandwich", slack(dtr2, 0.25 * d * r.hs_sq)),
    ];
    if let ExtendedReal::Finite(chi) = r.bures_chi2 {
        out.push(("bures_sq_le_bures_chi2", slack(r.bures_sq, chi)));
        if let ExtendedReal::Finite(up) = r.chi2_upper {
            out.push(("bures_chi2_le_upper", slack(chi, up)));
        }
    }
    let u = haar_unitary(rho.dim(), &mut stream(seed, 1));
    let rotated = quantum_report(&rho.in_basis(&u)?, &sigma.in_basis(&u)?)?;
    let mut worst: f64 = 0.0;
    for (a, b) in report_values(&r).into_iter().zip(report_values(&rotated)) {
        match (a, b) {
            (Some(a), Some(b)) => worst = worst.min(identity_slack(a, b)),
            (None, None) => {}
            _ => worst = f64::NEG_INFINITY,
        }
    }
    out.push(("unitary_invariance", worst));
    let p = ClassicalDistribution::from_density(&rho)?;
    let q = ClassicalDistribution::from_density(&sigma)?;
    let c = classical_report(&p, &q)?;
    if let ExtendedReal::Finite(chi) = c.chi2 {
        out.push(("classical_chi2_ge_4tv_sq", slack(4.0 * c.tv * c.tv, chi)));
    }
    out.push(("hellinger_sq_le_2tv", slack(c.hellinger_sq, 2.0 * c.tv)));
    Ok(out)
}

const OBSERVABLE_CHECKS: &[(&str, f64)] = &[
    ("concavity_deficit", 1e-9),
    ("sigma_delta_delta", 1e-9),
    ("delta_cubed", 1e-9),
    ("c_squared", 1e-9),
    ("rho_cubed", 1e-9),
    ("weighted_swap_identities", 1e-9),
    ("bias_bound", 1e-9),
    ("calibrated_variance_bound", 1e-9),
];

fn observable_instance(seed: u64, cal: &Calibration) -> Result<Samples> {
    let mut rng = stream(seed, 0);
    let d = rng.random_range(2..=4);
    let t = rng.random_range(1..=8);
    let sigma = random_reference(d, rng.random_bool(0.3), &mut rng);
    let ens = random_family(&sigma, t, false, &mut rng)?;
    let mut out: Samples = Vec::new();
    let conc = concavity_deficit(&ens, &sigma)?;
    out.push(("concavity_deficit", slack(conc.lhs, conc.rhs)));
    let rho = &ens.states()[0];
    let misc = misc_inequalities(rho, &sigma)?;
    for (name, v) in misc.inequalities() {
        out.push((name, slack(v.lhs, v.rhs)));
    }
    let scale = 1.0 + misc.chi2;
    let ident = [
        (misc.sigma_cubed - 1.0).abs(),
        misc.single_delta_max,
        (misc.delta_delta_sigma[0] - misc.chi2).abs(),
        (misc.delta_delta_sigma[1] - misc.chi2).abs(),
    ];
    out.push(("weighted_swap_identities", -ident.iter().fold(0.0f64, |a, &b| a.max(b)) / scale));
    let tag = KindTag::ALL[rng.random_range(0..4)];
    let (kind, inst) = random_instance(tag, d, t, rng.random())?;
    let m = exact_moments(&kind, &inst)?;
    out.push(("bias_bound", slack(m.bias.abs(), m.bias_bound)));
    out.push(("calibrated_variance_bound", slack(m.var_exact, cal.variance_constant(tag) * m.var_bound_sum())));
    Ok(out)
}
