//! Density matrices, product ensembles, classical distributions, random
//! generators and the ensemble JSON format.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{eig_hermitian, ComplexMatrix, HermitianEigen, C64, HERMITIAN_TOL};
use crate::rng::stream;

pub const TRACE_TOL: f64 = 1e-12;
/// Eigenvalues in `[-EIG_FLOOR, 0)` are clipped; anything lower is rejected.
pub const EIG_FLOOR: f64 = 1e-10;
/// Largest local dimension accepted from files.
pub const MAX_FILE_DIM: usize = 1024;

/// Positive semidefinite, unit-trace Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(Error::InvalidState(format!("expected a nonempty square matrix, got {}x{}", m.rows(), m.cols())));
        }
        if m.as_slice().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let dev = m.hermitian_deviation();
        if dev > HERMITIAN_TOL * m.max_abs().max(1.0) {
            return Err(Error::InvalidState(format!("not Hermitian (max deviation {:e})", dev)));
        }
        let tr = m.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace is {} (must be 1 within {:e})", tr, TRACE_TOL)));
        }
        let m = m.hermitian_part();
        let eig = eig_hermitian(&m)?;
        let min = eig.min_value();
        if min < -EIG_FLOOR {
            return Err(Error::InvalidState(format!("negative eigenvalue {:e}", min)));
        }
        if min < 0.0 {
            return Ok(DensityMatrix { m: clip_spectrum(&eig) });
        }
        Ok(DensityMatrix { m })
    }

    /// Wraps a matrix already known to be a state, clipping tiny negative
    /// eigenvalues produced by rounding.
    pub(crate) fn from_trusted(m: ComplexMatrix) -> Result<Self> {
        let m = m.hermitian_part();
        let tr = m.trace().re;
        let m = m.scale(1.0 / tr);
        let eig = eig_hermitian(&m)?;
        if eig.min_value() < -EIG_FLOOR {
            return Err(Error::NumericalViolation(format!("constructed state has eigenvalue {:e}", eig.min_value())));
        }
        if eig.min_value() < 0.0 {
            return Ok(DensityMatrix { m: clip_spectrum(&eig) });
        }
        Ok(DensityMatrix { m })
    }

    pub fn maximally_mixed(d: usize) -> Self {
        DensityMatrix { m: ComplexMatrix::identity(d).scale(1.0 / d as f64) }
    }

    pub fn basis(d: usize, k: usize) -> Result<Self> {
        if k >= d {
            return Err(Error::IndexOutOfRange(format!("basis state {} in dimension {}", k, d)));
        }
        let mut p = vec![0.0; d];
        p[k] = 1.0;
        Ok(DensityMatrix { m: ComplexMatrix::from_real_diagonal(&p) })
    }

    /// `|v><v| / <v|v>`.
    pub fn pure(v: &[C64]) -> Result<Self> {
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if v.is_empty() || !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::InvalidState("pure state needs a nonzero finite vector".into()));
        }
        Ok(DensityMatrix { m: ComplexMatrix::outer(v).scale(1.0 / n2) })
    }

    pub fn diagonal(p: &[f64]) -> Result<Self> {
        let dist = ClassicalDistribution::new(p.to_vec())?;
        Ok(dist.to_density())
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.m
    }

    pub fn eigen(&self) -> HermitianEigen {
        eig_hermitian(&self.m).expect("density matrices are Hermitian")
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().min_value()
    }

    pub fn purity(&self) -> f64 {
        self.m.as_slice().iter().map(|z| z.norm_sqr()).sum()
    }

    /// `U^dagger rho U`, the state expressed in the basis given by the columns of `U`.
    pub fn in_basis(&self, u: &ComplexMatrix) -> Result<Self> {
        DensityMatrix::from_trusted(self.m.conjugate_by(u)?)
    }

    pub fn is_diagonal(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|r| (0..d).all(|c| r == c || self.m[(r, c)].norm() <= tol))
    }
}

fn clip_spectrum(eig: &HermitianEigen) -> ComplexMatrix {
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    eig.map(|v| v.max(0.0) / total).hermitian_part()
}

/// Ordered list of local states of equal dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductEnsemble {
    dim: usize,
    states: Vec<DensityMatrix>,
}

impl ProductEnsemble {
    pub fn new(states: Vec<DensityMatrix>) -> Result<Self> {
        let dim = states.first().ok_or_else(|| Error::InvalidParameter("ensemble needs at least one state".into()))?.dim();
        if let Some((i, s)) = states.iter().enumerate().find(|(_, s)| s.dim() != dim) {
            return Err(Error::DimensionMismatch(format!("state {} has dimension {}, expected {}", i, s.dim(), dim)));
        }
        Ok(ProductEnsemble { dim, states })
    }

    pub fn iid(state: &DensityMatrix, t: usize) -> Result<Self> {
        Self::new(vec![state.clone(); t])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    pub fn matrices(&self) -> Vec<&ComplexMatrix> {
        self.states.iter().map(|s| s.matrix()).collect()
    }

    pub fn in_basis(&self, u: &ComplexMatrix) -> Result<Self> {
        Ok(ProductEnsemble { dim: self.dim, states: self.states.iter().map(|s| s.in_basis(u)).collect::<Result<_>>()? })
    }

    /// Diagonals of all states, which must be diagonal within `tol`.
    pub fn to_distributions(&self, tol: f64) -> Result<Vec<ClassicalDistribution>> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if !s.is_diagonal(tol) {
                    return Err(Error::InvalidState(format!("state {} is not diagonal", i)));
                }
                ClassicalDistribution::from_density(s)
            })
            .collect()
    }
}

pub fn average_state(ens: &ProductEnsemble) -> DensityMatrix {
    let d = ens.dim();
    let mut acc = ComplexMatrix::zeros(d, d);
    for s in ens.states() {
        acc += s.matrix();
    }
    DensityMatrix::from_trusted(acc.scale(1.0 / ens.len() as f64)).expect("convex combination of states")
}

/// `(1 - lambda) rho + lambda I/d`.
pub fn depolarize(rho: &DensityMatrix, lambda: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("depolarizing weight {} outside [0, 1]", lambda)));
    }
    let d = rho.dim();
    let m = &rho.matrix().scale(1.0 - lambda) + &ComplexMatrix::identity(d).scale(lambda / d as f64);
    DensityMatrix::from_trusted(m)
}

/// Probability vector with nonnegative entries summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalDistribution {
    probs: Vec<f64>,
}

impl ClassicalDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidState("empty distribution".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidState(format!("entry {} is {}", i, p)));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("entries sum to {} (must be 1 within {:e})", s, TRACE_TOL)));
        }
        Ok(ClassicalDistribution { probs })
    }

    pub fn uniform(d: usize) -> Self {
        ClassicalDistribution { probs: vec![1.0 / d as f64; d] }
    }

    pub(crate) fn from_trusted(mut probs: Vec<f64>) -> Self {
        for p in probs.iter_mut() {
            *p = p.max(0.0);
        }
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        ClassicalDistribution { probs }
    }

    pub fn from_density(rho: &DensityMatrix) -> Result<Self> {
        Ok(Self::from_trusted(rho.matrix().diagonal().iter().map(|z| z.re).collect()))
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Smallest probability.
    pub fn gamma(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix { m: ComplexMatrix::from_real_diagonal(&self.probs) }
    }

    /// Inverse-CDF draw.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

pub fn average_distribution(dists: &[ClassicalDistribution]) -> Result<ClassicalDistribution> {
    let d = dists.first().ok_or_else(|| Error::InvalidParameter("no distributions".into()))?.dim();
    if dists.iter().any(|p| p.dim() != d) {
        return Err(Error::DimensionMismatch("distributions have different supports".into()));
    }
    let mut acc = vec![0.0; d];
    for p in dists {
        for (a, v) in acc.iter_mut().zip(p.probs()) {
            *a += v;
        }
    }
    Ok(ClassicalDistribution::from_trusted(acc.into_iter().map(|a| a / dists.len() as f64).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    HaarPure,
    GinibreMixed,
    DiagonalDirichlet,
}

pub(crate) fn complex_gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub(crate) fn haar_vector(d: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    loop {
        let v: Vec<C64> = (0..d).map(|_| complex_gaussian(rng)).collect();
        let n: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|z| z / n).collect();
        }
    }
}

/// Haar-random unitary from Gram-Schmidt on a complex Ginibre matrix.
pub(crate) fn haar_unitary(d: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<C64> = (0..d).map(|_| complex_gaussian(rng)).collect();
        for u in &cols {
            let ip: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= ip * y;
            }
        }
        let n: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-8 {
            cols.push(v.into_iter().map(|z| z / n).collect());
        }
    }
    ComplexMatrix::from_fn(d, d, |r, c| cols[c][r])
}

pub(crate) fn random_state(d: usize, mode: GenerationMode, rng: &mut ChaCha8Rng) -> DensityMatrix {
    match mode {
        GenerationMode::HaarPure => DensityMatrix::pure(&haar_vector(d, rng)).expect("normalized vector"),
        GenerationMode::GinibreMixed => {
            let g = ComplexMatrix::from_fn(d, d, |_, _| complex_gaussian(rng));
            let m = &g * &g.adjoint();
            let tr = m.trace().re;
            DensityMatrix::from_trusted(m.scale(1.0 / tr)).expect("Wishart matrix is PSD")
        }
        GenerationMode::DiagonalDirichlet => {
            let w: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
            ClassicalDistribution::from_trusted(w).to_density()
        }
    }
}

/// `t` independent random states; state `i` depends only on `(seed, i)`.
pub fn random_ensemble(d: usize, t: usize, mode: GenerationMode, seed: u64) -> Result<ProductEnsemble> {
    if d == 0 || t == 0 {
        return Err(Error::InvalidParameter("dimension and length must be positive".into()));
    }
    let states: Vec<DensityMatrix> =
        (0..t).into_par_iter().map(|i| random_state(d, mode, &mut stream(seed, i as u64))).collect();
    ProductEnsemble::new(states)
}

/// How a perturbation moves the average state away from the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbStyle {
    /// Random traceless Hermitian direction.
    Coherent,
    /// Random traceless diagonal direction; off-diagonals are untouched.
    Diagonal,
    /// Mixing towards a random pure state.
    PureMix,
}

fn random_traceless(d: usize, diagonal: bool, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    let mut h = if diagonal {
        let diag: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        ComplexMatrix::from_real_diagonal(&diag)
    } else {
        let g = ComplexMatrix::from_fn(d, d, |_, _| complex_gaussian(rng));
        g.hermitian_part()
    };
    let shift = h.trace().re / d as f64;
    for i in 0..d {
        h[(i, i)] -= shift;
    }
    h
}

fn trace_norm(h: &ComplexMatrix) -> f64 {
    eig_hermitian(h).expect("Hermitian direction").values.iter().map(|v| v.abs()).sum()
}

const PERTURB_ATTEMPTS: usize = 64;

/// Ensemble of length `t` whose average state sits at trace distance `target`
/// from `sigma`, with the individual states spread around that average by
/// opposite pairs `avg +- eta E`.
pub fn perturb_ensemble(
    sigma: &DensityMatrix,
    target: f64,
    t: usize,
    style: PerturbStyle,
    seed: u64,
) -> Result<ProductEnsemble> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(Error::InvalidParameter(format!("target distance {} must be a nonnegative number", target)));
    }
    if t == 0 {
        return Err(Error::InvalidParameter("ensemble length must be positive".into()));
    }
    let d = sigma.dim();
    let mut rng = stream(seed, 0);
    let center = if target == 0.0 {
        sigma.clone()
    } else {
        shifted_center(sigma, target, style, &mut rng)?
    };
    Ok(spread_around(&center, t, style == PerturbStyle::Diagonal, &mut stream(seed, 1), d))
}

fn shifted_center(sigma: &DensityMatrix, target: f64, style: PerturbStyle, rng: &mut ChaCha8Rng) -> Result<DensityMatrix> {
    let d = sigma.dim();
    for attempt in 0..=PERTURB_ATTEMPTS {
        let dir = match style {
            PerturbStyle::Coherent => random_traceless(d, false, rng),
            PerturbStyle::Diagonal => random_traceless(d, true, rng),
            PerturbStyle::PureMix => {
                let psi = if attempt == PERTURB_ATTEMPTS {
                    let e = sigma.eigen();
                    e.vectors.column(d - 1)
                } else {
                    haar_vector(d, rng)
                };
                &ComplexMatrix::outer(&psi) - sigma.matrix()
            }
        };
        let half_norm = 0.5 * trace_norm(&dir);
        if half_norm <= 1e-12 {
            continue;
        }
        let s = target / half_norm;
        if style == PerturbStyle::PureMix && s > 1.0 {
            continue;
        }
        let cand = sigma.matrix() + &dir.scale(s);
        let min = eig_hermitian(&cand)?.min_value();
        if min >= -1e-12 {
            return DensityMatrix::from_trusted(cand);
        }
    }
    Err(Error::Unattainable(format!("no {:?} perturbation of this state reaches trace distance {}", style, target)))
}

/// Opposite pairs `center +- eta_k E_k` with `eta_k` at half the admissible
/// range; an odd trailing state equals the center.
fn spread_around(center: &DensityMatrix, t: usize, diagonal: bool, rng: &mut ChaCha8Rng, d: usize) -> ProductEnsemble {
    let lmin = center.min_eigenvalue().max(0.0);
    let mut states = Vec::with_capacity(t);
    for _ in 0..t / 2 {
        let e = random_traceless(d, diagonal, rng);
        let op = eig_hermitian(&e).expect("Hermitian").values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let eta = if op > 0.0 { 0.5 * lmin / op } else { 0.0 };
        let de = e.scale(eta);
        states.push(DensityMatrix::from_trusted(center.matrix() + &de).expect("inside the PSD cone"));
        states.push(DensityMatrix::from_trusted(center.matrix() - &de).expect("inside the PSD cone"));
    }
    if t % 2 == 1 {
        states.push(center.clone());
    }
    ProductEnsemble::new(states).expect("equal dimensions")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleFile {
    dim: usize,
    states: Vec<Vec<[f64; 2]>>,
}

/// Parses `{"dim": d, "states": [[[re, im], ...], ...]}` with each state
/// stored row-major as `d*d` complex entries.
pub fn read_ensemble_json(text: &str) -> Result<ProductEnsemble> {
    let file: EnsembleFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let d = file.dim;
    if d == 0 || d > MAX_FILE_DIM {
        return Err(Error::Parse(format!("field `dim`: {} is outside 1..={}", d, MAX_FILE_DIM)));
    }
    if file.states.is_empty() {
        return Err(Error::Parse("field `states`: at least one state is required".into()));
    }
    let want = d * d;
    let mut states = Vec::with_capacity(file.states.len());
    for (i, entries) in file.states.into_iter().enumerate() {
        if entries.len() != want {
            return Err(Error::Parse(format!("states[{}]: expected {} entries for dim {}, found {}", i, want, d, entries.len())));
        }
        if let Some(k) = entries.iter().position(|[re, im]| !re.is_finite() || !im.is_finite()) {
            return Err(Error::Parse(format!("states[{}][{}]: non-finite entry", i, k)));
        }
        let m = ComplexMatrix::from_vec(d, d, entries.into_iter().map(|[re, im]| C64::new(re, im)).collect())?;
        let s = DensityMatrix::new(m).map_err(|e| Error::Parse(format!("states[{}]: {}", i, e)))?;
        states.push(s);
    }
    ProductEnsemble::new(states)
}

pub fn write_ensemble_json(ens: &ProductEnsemble) -> String {
    let file = EnsembleFile {
        dim: ens.dim(),
        states: ens.states().iter().map(|s| s.matrix().as_slice().iter().map(|z| [z.re, z.im]).collect()).collect(),
    };
    serde_json::to_string_pretty(&file).expect("plain data serializes")
}

/// Reads a file holding exactly one state.
pub fn read_state_json(text: &str) -> Result<DensityMatrix> {
    let ens = read_ensemble_json(text)?;
    if ens.len() != 1 {
        return Err(Error::Parse(format!("field `states`: expected exactly one state, found {}", ens.len())));
    }
    Ok(ens.states()[0].clone())
}
