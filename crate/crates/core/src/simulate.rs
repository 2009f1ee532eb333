//! Exact simulation of a single projective measurement of an observable on
//! a product state, and Monte Carlo power estimation for the testers.
//!
//! The observables used by the testers only couple basis vectors with the
//! same multiset of symbols, so they split into blocks. When every block is
//! small enough each one is diagonalized once and the full outcome
//! distribution is cached; a trial then costs one draw from it.
//!
//! Otherwise every trial draws a pure product state from the spectral
//! decompositions of the site states and samples the outcome from the
//! spectral measure of the observable at that vector, obtained by Lanczos
//! iteration with full reorthogonalization run until the Krylov space is
//! invariant.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{eig_block, eig_hermitian, ComplexMatrix, TensorSpace, UnionFind, C64, ZERO};
use crate::observables::{Instance, KindTag, ObservableKind, SparseObservable};
use crate::rng::stream;
use crate::states::ProductEnsemble;
use crate::testers::{ChebyshevRule, PreparedTester, Verdict};

/// Largest block that will be diagonalized.
pub const MAX_BLOCK: usize = 4096;
/// Allowed drift of the total outcome probability from one.
pub const PROB_DRIFT_TOL: f64 = 1e-6;
/// Relative gap below which eigenvalues count as one outcome.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub value: f64,
    pub prob: f64,
}

/// Largest Krylov space built for one trial.
pub const MAX_KRYLOV: usize = 256;
/// Residual norm, relative to the observable's norm bound, at which the
/// Krylov space counts as invariant.
pub const KRYLOV_BREAKDOWN: f64 = 1e-12;

#[derive(Clone, Debug)]
struct SiteMixture {
    cdf: Vec<f64>,
    vectors: Vec<Vec<C64>>,
}

#[derive(Clone, Debug)]
enum ModelEngine {
    Exact { outcomes: Vec<Outcome>, cdf: Vec<f64> },
    Krylov { obs: SparseObservable, sites: Vec<SiteMixture>, norm_bound: f64 },
}

/// Outcome distribution of measuring an observable on a product state.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    engine: ModelEngine,
    blocks: usize,
    largest_block: usize,
}

fn merge_outcomes(mut pairs: Vec<(f64, f64)>) -> (Vec<Outcome>, Vec<f64>) {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut outcomes: Vec<Outcome> = Vec::new();
    for (v, p) in pairs {
        let p = p.max(0.0);
        match outcomes.last_mut() {
            Some(last) if (v - last.value).abs() <= DEGENERACY_TOL * last.value.abs().max(1.0) => last.prob += p,
            _ => outcomes.push(Outcome { value: v, prob: p }),
        }
    }
    let mass: f64 = outcomes.iter().map(|o| o.prob).sum();
    let mut acc = 0.0;
    let cdf = outcomes
        .iter_mut()
        .map(|o| {
            o.prob /= mass;
            acc += o.prob;
            acc
        })
        .collect();
    (outcomes, cdf)
}

fn draw(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn matvec(obs: &SparseObservable, v: &[C64]) -> Vec<C64> {
    (0..obs.dim()).map(|r| obs.row(r).iter().map(|&(c, a)| a * v[c as usize]).sum()).collect()
}

/// Spectral measure of `obs` at the unit vector `psi`: the distinct
/// eigenvalues reached from `psi` and the squared norms of the projections.
pub fn spectral_measure(obs: &SparseObservable, psi: &[C64]) -> Result<Vec<Outcome>> {
    let norm_bound = obs_norm_bound(obs);
    Ok(merge_outcomes(lanczos(obs, psi, norm_bound)?).0)
}

fn obs_norm_bound(obs: &SparseObservable) -> f64 {
    (0..obs.dim()).map(|r| obs.row(r).iter().map(|e| e.1.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn lanczos(obs: &SparseObservable, psi: &[C64], norm_bound: f64) -> Result<Vec<(f64, f64)>> {
    let n = psi.len();
    let norm = dot(psi, psi).re.sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter("starting vector is zero".into()));
    }
    let mut basis: Vec<Vec<C64>> = vec![psi.iter().map(|z| z / norm).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let q = basis.last().expect("nonempty basis");
        let mut w = matvec(obs, q);
        alpha.push(dot(q, &w).re);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let r = dot(&w, &w).re.sqrt();
        if r <= KRYLOV_BREAKDOWN * norm_bound.max(1.0) || basis.len() == n {
            break;
        }
        if basis.len() >= MAX_KRYLOV {
            return Err(Error::DimensionCap { dim: basis.len() + 1, cap: MAX_KRYLOV });
        }
        beta.push(r);
        basis.push(w.into_iter().map(|z| z / r).collect());
    }
    let m = alpha.len();
    let tri = DMatrix::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(tri);
    Ok((0..m).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect())
}

fn blocks_of(obs: &SparseObservable) -> Vec<Vec<usize>> {
    let n = obs.dim();
    let mut uf = UnionFind::new(n);
    for r in 0..n {
        for &(c, _) in obs.row(r) {
            uf.union(r, c as usize);
        }
    }
    uf.components()
}

/// Eigen-pairs of one block and the probability of each eigenvector.
fn block_outcomes(obs: &SparseObservable, block: &[usize], sites: &[ComplexMatrix]) -> Vec<(f64, f64)> {
    let b = block.len();
    let space = obs.space();
    let mut h = vec![ZERO; b * b];
    for (i, &g) in block.iter().enumerate() {
        for &(c, v) in obs.row(g) {
            let j = block.binary_search(&(c as usize)).expect("blocks are closed under the pattern");
            h[i * b + j] += v;
        }
    }
    let (vals, vecs) = eig_block(b, &h);
    if b == 1 {
        let p = product_entry(space, sites, block[0], block[0]).re;
        return vec![(vals[0], p)];
    }
    let digits: Vec<Vec<usize>> = block.iter().map(|&g| space.digits(g)).collect();
    let rho = DMatrix::<C64>::from_fn(b, b, |r, c| {
        let mut z = C64::new(1.0, 0.0);
        for (k, s) in sites.iter().enumerate() {
            z *= s[(digits[r][k], digits[c][k])];
            if z == ZERO {
                break;
            }
        }
        z
    });
    let w = &rho * &vecs;
    (0..b)
        .map(|k| {
            let p: f64 = (0..b).map(|x| (vecs[(x, k)].conj() * w[(x, k)]).re).sum();
            (vals[k], p)
        })
        .collect()
}

fn product_entry(space: &TensorSpace, sites: &[ComplexMatrix], x: usize, y: usize) -> C64 {
    let mut z = C64::new(1.0, 0.0);
    for (k, s) in sites.iter().enumerate() {
        z *= s[(space.digit(x, k), space.digit(y, k))];
    }
    z
}

impl MeasurementModel {
    /// `sites[k]` is the state of factor `k`, in the same basis as `obs`.
    pub fn new(obs: &SparseObservable, sites: &[ComplexMatrix]) -> Result<Self> {
        let space = obs.space();
        if sites.len() != space.n_factors() || sites.iter().zip(space.dims()).any(|(s, &d)| s.rows() != d || s.cols() != d) {
            return Err(Error::DimensionMismatch("site states do not match the observable's factors".into()));
        }
        let blocks = blocks_of(obs);
        let largest_block = blocks.iter().map(|b| b.len()).max().unwrap_or(0);
        if largest_block > MAX_BLOCK {
            return Self::krylov(obs, sites, blocks.len(), largest_block);
        }
        let pairs: Vec<(f64, f64)> = blocks.par_iter().flat_map_iter(|b| block_outcomes(obs, b, sites)).collect();
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if (total - 1.0).abs() > PROB_DRIFT_TOL {
            return Err(Error::NumericalViolation(format!("outcome probabilities sum to {}", total)));
        }
        let (outcomes, cdf) = merge_outcomes(pairs);
        Ok(MeasurementModel { engine: ModelEngine::Exact { outcomes, cdf }, blocks: blocks.len(), largest_block })
    }

    /// Per-trial sampling through pure product states and Krylov spaces,
    /// regardless of block sizes.
    pub fn new_sampled(obs: &SparseObservable, sites: &[ComplexMatrix]) -> Result<Self> {
        let space = obs.space();
        if sites.len() != space.n_factors() || sites.iter().zip(space.dims()).any(|(s, &d)| s.rows() != d || s.cols() != d) {
            return Err(Error::DimensionMismatch("site states do not match the observable's factors".into()));
        }
        let blocks = blocks_of(obs);
        let largest_block = blocks.iter().map(|b| b.len()).max().unwrap_or(0);
        Self::krylov(obs, sites, blocks.len(), largest_block)
    }

    fn krylov(obs: &SparseObservable, sites: &[ComplexMatrix], blocks: usize, largest_block: usize) -> Result<Self> {
        let mixtures = sites
            .iter()
            .map(|s| {
                let eig = eig_hermitian(&s.hermitian_part())?;
                let pairs: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
                let mass: f64 = pairs.iter().sum();
                if (mass - 1.0).abs() > PROB_DRIFT_TOL {
                    return Err(Error::NumericalViolation(format!("site state has trace {}", mass)));
                }
                let mut acc = 0.0;
                let cdf = pairs
                    .iter()
                    .map(|p| {
                        acc += p / mass;
                        acc
                    })
                    .collect();
                Ok(SiteMixture { cdf, vectors: (0..eig.values.len()).map(|k| eig.vectors.column(k)).collect() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MeasurementModel {
            engine: ModelEngine::Krylov { obs: obs.clone(), sites: mixtures, norm_bound: obs_norm_bound(obs) },
            blocks,
            largest_block,
        })
    }

    /// Model for the observable of `kind` on `inst`.
    pub fn for_instance(kind: &ObservableKind, inst: &Instance) -> Result<Self> {
        if kind.tag() == KindTag::ClassicalM {
            return Err(Error::InvalidParameter("classical instances are sampled directly".into()));
        }
        let (d, t) = crate::observables::check_instance(kind, inst)?;
        let framed = crate::observables::build_sparse(kind, d, t)?;
        let sites = crate::observables::site_states(kind, inst)?;
        Self::new(&framed.observable, &sites)
    }

    /// Whether the full outcome distribution is cached.
    pub fn is_exact(&self) -> bool {
        matches!(self.engine, ModelEngine::Exact { .. })
    }

    /// Distinct outcomes in increasing order with their probabilities, when
    /// the distribution is cached.
    pub fn outcomes(&self) -> Option<&[Outcome]> {
        match &self.engine {
            ModelEngine::Exact { outcomes, .. } => Some(outcomes),
            ModelEngine::Krylov { .. } => None,
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn largest_block(&self) -> usize {
        self.largest_block
    }

    pub fn mean(&self) -> Option<f64> {
        self.outcomes().map(|o| o.iter().map(|o| o.value * o.prob).sum())
    }

    pub fn variance(&self) -> Option<f64> {
        let m = self.mean()?;
        self.outcomes().map(|o| o.iter().map(|o| (o.value - m).powi(2) * o.prob).sum())
    }

    /// `P(outcome >= threshold)`.
    pub fn prob_at_least(&self, threshold: f64) -> Option<f64> {
        self.outcomes().map(|o| o.iter().filter(|o| o.value >= threshold).map(|o| o.prob).sum())
    }

    /// One outcome. The sampled path fails only if the Krylov space
    /// outgrows [`MAX_KRYLOV`].
    pub fn try_sample(&self, rng: &mut impl Rng) -> Result<f64> {
        match &self.engine {
            ModelEngine::Exact { outcomes, cdf } => Ok(outcomes[draw(cdf, rng)].value),
            ModelEngine::Krylov { obs, sites, norm_bound } => {
                let picks: Vec<&[C64]> = sites.iter().map(|s| s.vectors[draw(&s.cdf, rng)].as_slice()).collect();
                let space = obs.space();
                let psi: Vec<C64> = (0..space.total_dim())
                    .map(|x| picks.iter().enumerate().map(|(k, v)| v[space.digit(x, k)]).product())
                    .collect();
                let (outcomes, cdf) = merge_outcomes(lanczos(obs, &psi, *norm_bound)?);
                Ok(outcomes[draw(&cdf, rng)].value)
            }
        }
    }

    /// As [`MeasurementModel::try_sample`], yielding NaN on failure.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.try_sample(rng).unwrap_or(f64::NAN)
    }
}

/// One measurement of a dense Hermitian `obs` on the product of `ens`.
pub fn measure_observable(obs: &ComplexMatrix, ens: &ProductEnsemble, seed: u64) -> Result<f64> {
    let space = TensorSpace::uniform(ens.dim(), ens.len())?;
    let sparse = SparseObservable::from_dense(obs, space)?;
    let sites: Vec<ComplexMatrix> = ens.states().iter().map(|s| s.matrix().clone()).collect();
    let model = MeasurementModel::new(&sparse, &sites)?;
    model.try_sample(&mut stream(seed, 0))
}

/// 95% Wilson score interval.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub trials: u64,
    /// Number of FAR verdicts.
    pub far_count: u64,
    pub far_rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

impl RateEstimate {
    pub fn from_counts(far_count: u64, trials: u64) -> Self {
        let (wilson_low, wilson_high) = wilson_interval(far_count, trials);
        RateEstimate { trials, far_count, far_rate: far_count as f64 / trials.max(1) as f64, wilson_low, wilson_high }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub kind: KindTag,
    pub d: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub theta: f64,
    pub c: f64,
    pub k: f64,
    pub master_seed: u64,
    /// FAR rate on the null instance (an error).
    pub null: RateEstimate,
    /// FAR rate on the far instance (a success).
    pub far: RateEstimate,
}

impl PowerReport {
    /// Larger of the two error rates.
    pub fn max_error(&self) -> f64 {
        self.null.far_rate.max(1.0 - self.far.far_rate)
    }
}

/// Number of FAR verdicts in `trials` runs; trial `i` uses seed `hash64(master_seed, i)`.
pub fn count_far(tester: &PreparedTester, trials: u64, master_seed: u64) -> u64 {
    (0..trials)
        .into_par_iter()
        .map(|i| u64::from(tester.run_seeded(crate::rng::hash64(master_seed, i)).verdict == Verdict::Far))
        .sum()
}

/// Monte Carlo acceptance and rejection rates on a null and a far instance.
/// Both use the same per-trial seeds.
pub fn estimate_success(
    kind: &ObservableKind,
    null_inst: &Instance,
    far_inst: &Instance,
    rule: &ChebyshevRule,
    trials: u64,
    master_seed: u64,
) -> Result<PowerReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    let (d, t) = crate::observables::check_instance(kind, null_inst)?;
    let (d2, t2) = crate::observables::check_instance(kind, far_inst)?;
    if (d, t) != (d2, t2) {
        return Err(Error::DimensionMismatch("null and far instances differ in shape".into()));
    }
    let null_tester = PreparedTester::new(kind, null_inst, *rule)?;
    let far_tester = PreparedTester::new(kind, far_inst, *rule)?;
    Ok(PowerReport {
        kind: kind.tag(),
        d,
        t,
        theta: rule.theta,
        c: rule.c,
        k: rule.k,
        master_seed,
        null: RateEstimate::from_counts(count_far(&null_tester, trials, master_seed), trials),
        far: RateEstimate::from_counts(count_far(&far_tester, trials, master_seed), trials),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::build_observable;
    use crate::states::DensityMatrix;

    #[test]
    fn wilson_reference_values() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (lo, hi) = wilson_interval(0, 10);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.2775).abs() < 1e-4);
    }

    #[test]
    fn pure_iid_gives_deterministic_value() {
        let ens = ProductEnsemble::iid(&DensityMatrix::basis(2, 0).unwrap(), 4).unwrap();
        let model = MeasurementModel::for_instance(&ObservableKind::MaximallyMixed, &Instance::Quantum(ens)).unwrap();
        let support: Vec<&Outcome> = model.outcomes().unwrap().iter().filter(|o| o.prob > 1e-12).collect();
        assert_eq!(support.len(), 1);
        assert!((support[0].value - (0.75 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn dense_path_matches_structured_path() {
        let ens = crate::states::random_ensemble(2, 4, crate::states::GenerationMode::GinibreMixed, 3).unwrap();
        let inst = Instance::Quantum(ens.clone());
        let model = MeasurementModel::for_instance(&ObservableKind::MaximallyMixed, &inst).unwrap();
        let a = build_observable(&ObservableKind::MaximallyMixed, 2, 4).unwrap();
        let space = TensorSpace::uniform(2, 4).unwrap();
        let sites: Vec<ComplexMatrix> = ens.states().iter().map(|s| s.matrix().clone()).collect();
        let dense = MeasurementModel::new(&SparseObservable::from_dense(&a, space).unwrap(), &sites).unwrap();
        assert!((model.mean().unwrap() - dense.mean().unwrap()).abs() < 1e-12);
        assert!((model.variance().unwrap() - dense.variance().unwrap()).abs() < 1e-12);
        for v in (0..100).map(|s| measure_observable(&a, &ens, s).unwrap()) {
            assert!(model.outcomes().unwrap().iter().any(|o| (o.value - v).abs() < 1e-9));
        }
    }

    #[test]
    fn spectral_measure_matches_cached_distribution_on_pure_products() {
        let kind = ObservableKind::MaximallyMixed;
        let ens = crate::states::random_ensemble(2, 5, crate::states::GenerationMode::HaarPure, 9).unwrap();
        let exact = MeasurementModel::for_instance(&kind, &Instance::Quantum(ens.clone())).unwrap();
        let obs = SparseObservable::from_dense(&build_observable(&kind, 2, 5).unwrap(), TensorSpace::uniform(2, 5).unwrap()).unwrap();
        let space = obs.space().clone();
        let vecs: Vec<Vec<C64>> = ens
            .states()
            .iter()
            .map(|s| {
                let e = eig_hermitian(s.matrix()).unwrap();
                e.vectors.column(e.values.len() - 1)
            })
            .collect();
        let psi: Vec<C64> = (0..space.total_dim()).map(|x| vecs.iter().enumerate().map(|(k, v)| v[space.digit(x, k)]).product()).collect();
        let measure = spectral_measure(&obs, &psi).unwrap();
        let cached: Vec<&Outcome> = exact.outcomes().unwrap().iter().filter(|o| o.prob > 1e-10).collect();
        let reached: Vec<&Outcome> = measure.iter().filter(|o| o.prob > 1e-10).collect();
        assert_eq!(cached.len(), reached.len());
        for (a, b) in cached.iter().zip(&reached) {
            assert!((a.value - b.value).abs() < 1e-9 && (a.prob - b.prob).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_engine_agrees_with_cached_moments() {
        let kind = ObservableKind::MaximallyMixed;
        let ens = crate::states::random_ensemble(2, 4, crate::states::GenerationMode::GinibreMixed, 5).unwrap();
        let exact = MeasurementModel::for_instance(&kind, &Instance::Quantum(ens.clone())).unwrap();
        let obs = SparseObservable::from_dense(&build_observable(&kind, 2, 4).unwrap(), TensorSpace::uniform(2, 4).unwrap()).unwrap();
        let sites: Vec<ComplexMatrix> = ens.states().iter().map(|s| s.matrix().clone()).collect();
        let sampled = MeasurementModel::new_sampled(&obs, &sites).unwrap();
        assert!(exact.is_exact() && !sampled.is_exact());
        let n = 4000;
        let mut rng = stream(17, 0);
        let xs: Vec<f64> = (0..n).map(|_| sampled.try_sample(&mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = (exact.variance().unwrap() / n as f64).sqrt();
        assert!((mean - exact.mean().unwrap()).abs() < 4.0 * se);
        for v in xs {
            assert!(exact.outcomes().unwrap().iter().any(|o| (o.value - v).abs() < 1e-9));
        }
    }
}
