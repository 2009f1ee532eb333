//! Tester observables, their exact moments and the analytic bounds on them.
//!
//! The three quantum observables are weighted sums of two-site operators
//! `sum_{a<b} w e_a e_b K_ab + c I` where `K` is either the swap or the
//! weighted swap `C = sum_ij |ji><ij| / q(i,j)` (taken in the eigenbasis of
//! the reference state, `q(i,j) = (q_i + q_j) / 2`). Their exact means and
//! variances follow from one-, two- and three-site trace identities.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distances::{bures_chi2_in_basis, chi2, hs_sq};
use crate::error::{Error, Result};
use crate::matcore::{hadamard_div, ComplexMatrix, TensorSpace, C64, ZERO};
use crate::states::{average_distribution, average_state, ClassicalDistribution, DensityMatrix, ProductEnsemble};

/// Hard cap on the dimension of the space an observable acts on.
pub const DIM_CAP: usize = 1 << 16;
/// Cap on materializing a full dense matrix (`DENSE_CAP^2` complex entries).
pub const DENSE_CAP: usize = 1 << 13;
/// Smallest eigenvalue accepted for a reference state that gets inverted.
pub const FULL_RANK_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KindTag {
    #[serde(rename = "MM_A")]
    MmA,
    #[serde(rename = "KNOWN_M")]
    KnownM,
    #[serde(rename = "UNKNOWN_Z")]
    UnknownZ,
    #[serde(rename = "CLASSICAL_M")]
    ClassicalM,
}

impl KindTag {
    pub const ALL: [KindTag; 4] = [KindTag::MmA, KindTag::KnownM, KindTag::UnknownZ, KindTag::ClassicalM];

    pub fn as_str(self) -> &'static str {
        match self {
            KindTag::MmA => "MM_A",
            KindTag::KnownM => "KNOWN_M",
            KindTag::UnknownZ => "UNKNOWN_Z",
            KindTag::ClassicalM => "CLASSICAL_M",
        }
    }
}

impl fmt::Display for KindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for KindTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KindTag::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown kind {:?} (expected MM_A, KNOWN_M, UNKNOWN_Z or CLASSICAL_M)", s)))
    }
}

/// Which hypothesis is being tested, with its reference data.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservableKind {
    /// Closeness of the average state to `I/d`.
    MaximallyMixed,
    /// Closeness of the average state to a known full-rank state.
    KnownState(DensityMatrix),
    /// Closeness of the averages of two unknown ensembles.
    UnknownPair,
    /// Closeness of the average distribution to a known full-support distribution.
    Classical(ClassicalDistribution),
}

impl ObservableKind {
    pub fn tag(&self) -> KindTag {
        match self {
            ObservableKind::MaximallyMixed => KindTag::MmA,
            ObservableKind::KnownState(_) => KindTag::KnownM,
            ObservableKind::UnknownPair => KindTag::UnknownZ,
            ObservableKind::Classical(_) => KindTag::ClassicalM,
        }
    }

    /// Smallest eigenvalue (or probability) of the reference; 1/d for `I/d`.
    pub fn gamma(&self, d: usize) -> f64 {
        match self {
            ObservableKind::KnownState(s) => s.min_eigenvalue().max(0.0),
            ObservableKind::Classical(q) => q.gamma(),
            _ => 1.0 / d as f64,
        }
    }

    fn reference_dim(&self) -> Option<usize> {
        match self {
            ObservableKind::KnownState(s) => Some(s.dim()),
            ObservableKind::Classical(q) => Some(q.dim()),
            _ => None,
        }
    }
}

/// The states a tester is run on.
#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    Quantum(ProductEnsemble),
    Pair { rho: ProductEnsemble, sigma: ProductEnsemble },
    Classical(Vec<ClassicalDistribution>),
}

impl Instance {
    pub fn dim(&self) -> usize {
        match self {
            Instance::Quantum(e) => e.dim(),
            Instance::Pair { rho, .. } => rho.dim(),
            Instance::Classical(p) => p.first().map(|p| p.dim()).unwrap_or(0),
        }
    }

    /// Number of copies `T` per side.
    pub fn len(&self) -> usize {
        match self {
            Instance::Quantum(e) => e.len(),
            Instance::Pair { rho, .. } => rho.len(),
            Instance::Classical(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Validates that `inst` fits `kind` and returns `(d, T)`.
pub fn check_instance(kind: &ObservableKind, inst: &Instance) -> Result<(usize, usize)> {
    let (d, t) = (inst.dim(), inst.len());
    if t == 0 {
        return Err(Error::InvalidParameter("instance has no copies".into()));
    }
    match (kind, inst) {
        (ObservableKind::MaximallyMixed, Instance::Quantum(_))
        | (ObservableKind::KnownState(_), Instance::Quantum(_))
        | (ObservableKind::Classical(_), Instance::Classical(_)) => {}
        (ObservableKind::UnknownPair, Instance::Pair { rho, sigma }) => {
            if rho.dim() != sigma.dim() || rho.len() != sigma.len() {
                return Err(Error::DimensionMismatch(format!(
                    "pair ensembles differ: {} states of dim {} vs {} states of dim {}",
                    rho.len(),
                    rho.dim(),
                    sigma.len(),
                    sigma.dim()
                )));
            }
        }
        _ => {
            return Err(Error::InvalidParameter(format!("instance type does not match kind {}", kind.tag())));
        }
    }
    if let Instance::Classical(p) = inst {
        if p.iter().any(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch("distributions have different supports".into()));
        }
    }
    if let Some(rd) = kind.reference_dim() {
        if rd != d {
            return Err(Error::DimensionMismatch(format!("reference has dim {} but the instance has dim {}", rd, d)));
        }
    }
    match kind {
        ObservableKind::KnownState(_) | ObservableKind::Classical(_) if kind.gamma(d) <= FULL_RANK_TOL => {
            Err(Error::InvalidParameter("reference must have full support (smallest eigenvalue is zero)".into()))
        }
        _ => Ok((d, t)),
    }
}

/// Two-site kernel of a pair-sum observable.
#[derive(Clone, Debug)]
enum Kernel {
    Swap,
    /// Weighted swap with the reference spectrum `q`.
    Weighted(Vec<f64>),
}

impl Kernel {
    fn value(&self, a: usize, b: usize) -> f64 {
        match self {
            Kernel::Swap => 1.0,
            Kernel::Weighted(q) => 2.0 / (q[a] + q[b]),
        }
    }
}

/// `w sum_{a<b} eps_a eps_b K_ab + c I` on `n = eps.len()` sites of dimension `d`.
#[derive(Clone, Debug)]
struct PairSum {
    d: usize,
    eps: Vec<f64>,
    w: f64,
    c: f64,
    kernel: Kernel,
}

fn pair_structure(kind: &ObservableKind, d: usize, t: usize) -> Result<(PairSum, Option<ComplexMatrix>)> {
    let tf = t as f64;
    let w = 2.0 / (tf * tf);
    Ok(match kind {
        ObservableKind::MaximallyMixed => {
            (PairSum { d, eps: vec![1.0; t], w, c: -1.0 / d as f64, kernel: Kernel::Swap }, None)
        }
        ObservableKind::KnownState(sigma) => {
            let e = sigma.eigen();
            let q: Vec<f64> = e.values.iter().map(|v| v.max(0.0)).collect();
            (PairSum { d, eps: vec![1.0; t], w, c: -(tf - 1.0) / tf, kernel: Kernel::Weighted(q) }, Some(e.vectors))
        }
        ObservableKind::UnknownPair => {
            let mut eps = vec![1.0; t];
            eps.extend(std::iter::repeat(-1.0).take(t));
            (PairSum { d, eps, w, c: 0.0, kernel: Kernel::Swap }, None)
        }
        ObservableKind::Classical(_) => {
            return Err(Error::InvalidParameter("the classical statistic is not a pair sum".into()));
        }
    })
}

/// Hermitian operator stored by rows as `(column, value)` lists, together
/// with the tensor structure of the space it acts on.
#[derive(Clone, Debug)]
pub struct SparseObservable {
    space: TensorSpace,
    rows: Vec<Vec<(u32, C64)>>,
}

impl SparseObservable {
    pub fn space(&self) -> &TensorSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn row(&self, r: usize) -> &[(u32, C64)] {
        &self.rows[r]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn from_dense(m: &ComplexMatrix, space: TensorSpace) -> Result<Self> {
        crate::matcore::check_operator(m, &space)?;
        if space.total_dim() > DIM_CAP {
            return Err(Error::DimensionCap { dim: space.total_dim(), cap: DIM_CAP });
        }
        let dev = m.hermitian_deviation();
        if dev > 1e-10 * m.max_abs().max(1.0) {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let n = space.total_dim();
        let rows = (0..n)
            .map(|r| (0..n).filter(|&c| m[(r, c)] != ZERO).map(|c| (c as u32, m[(r, c)])).collect())
            .collect();
        Ok(SparseObservable { space, rows })
    }

    pub fn to_dense(&self) -> Result<ComplexMatrix> {
        let n = self.dim();
        if n > DENSE_CAP {
            return Err(Error::DimensionCap { dim: n, cap: DENSE_CAP });
        }
        let mut m = ComplexMatrix::zeros(n, n);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[(r, c as usize)] += v;
            }
        }
        Ok(m)
    }
}

fn sparse_pair_sum(p: &PairSum) -> Result<SparseObservable> {
    let n = p.eps.len();
    let space = TensorSpace::uniform(p.d, n).map_err(|_| Error::DimensionCap { dim: usize::MAX, cap: DIM_CAP })?;
    let total = space.total_dim();
    if total > DIM_CAP {
        return Err(Error::DimensionCap { dim: total, cap: DIM_CAP });
    }
    let rows = (0..total)
        .map(|x| {
            let digits = space.digits(x);
            let mut entries: Vec<(u32, f64)> = Vec::with_capacity(n * (n - 1) / 2 + 1);
            entries.push((x as u32, p.c));
            for a in 0..n {
                for b in (a + 1)..n {
                    let (xa, xb) = (digits[a], digits[b]);
                    let y = x + xb * space.stride(a) + xa * space.stride(b) - xa * space.stride(a) - xb * space.stride(b);
                    entries.push((y as u32, p.w * p.eps[a] * p.eps[b] * p.kernel.value(xa, xb)));
                }
            }
            entries.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(u32, C64)> = Vec::with_capacity(entries.len());
            for (c, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1.re += v,
                    _ => merged.push((c, C64::new(v, 0.0))),
                }
            }
            merged.retain(|e| e.1 != ZERO);
            merged
        })
        .collect();
    Ok(SparseObservable { space, rows })
}

/// Diagonal operator on `2T` sites (first and second sample of every copy,
/// interleaved) whose value is the classical statistic of that outcome.
fn sparse_classical(q: &ClassicalDistribution, t: usize) -> Result<SparseObservable> {
    let d = q.dim();
    let space = TensorSpace::uniform(d, 2 * t).map_err(|_| Error::DimensionCap { dim: usize::MAX, cap: DIM_CAP })?;
    let total = space.total_dim();
    if total > DIM_CAP {
        return Err(Error::DimensionCap { dim: total, cap: DIM_CAP });
    }
    let rows = (0..total)
        .map(|x| {
            let digits = space.digits(x);
            let first: Vec<usize> = digits.iter().step_by(2).copied().collect();
            let second: Vec<usize> = digits.iter().skip(1).step_by(2).copied().collect();
            let v = classical_from_samples(&first, &second, q.probs());
            vec![(x as u32, C64::new(v, 0.0))]
        })
        .collect();
    Ok(SparseObservable { space, rows })
}

pub(crate) fn classical_from_samples(first: &[usize], second: &[usize], q: &[f64]) -> f64 {
    let t = first.len() as f64;
    let mut n1 = vec![0u64; q.len()];
    let mut n2 = vec![0u64; q.len()];
    for &j in first {
        n1[j] += 1;
    }
    for &j in second {
        n2[j] += 1;
    }
    let s: f64 = (0..q.len()).filter(|&j| n1[j] > 0 && n2[j] > 0).map(|j| (n1[j] * n2[j]) as f64 / q[j]).sum();
    s / (t * t) - 1.0
}

/// Observable in its working frame plus the per-factor unitary relating that
/// frame to the computational basis (computational = `U^{(x)n} O U^{dagger (x)n}`).
#[derive(Clone, Debug)]
pub struct FramedObservable {
    pub observable: SparseObservable,
    pub frame: Option<ComplexMatrix>,
}

pub fn build_sparse(kind: &ObservableKind, d: usize, t: usize) -> Result<FramedObservable> {
    if d == 0 || t == 0 {
        return Err(Error::InvalidParameter("dimension and copy count must be positive".into()));
    }
    if let Some(rd) = kind.reference_dim() {
        if rd != d {
            return Err(Error::DimensionMismatch(format!("reference has dim {} but d = {}", rd, d)));
        }
    }
    let sites = match kind {
        ObservableKind::UnknownPair | ObservableKind::Classical(_) => 2 * t,
        _ => t,
    };
    let total = (d as f64).powi(sites as i32);
    if total > DIM_CAP as f64 {
        return Err(Error::DimensionCap { dim: total.min(usize::MAX as f64) as usize, cap: DIM_CAP });
    }
    if let ObservableKind::Classical(q) = kind {
        return Ok(FramedObservable { observable: sparse_classical(q, t)?, frame: None });
    }
    if kind.gamma(d) <= FULL_RANK_TOL {
        return Err(Error::InvalidParameter("reference must be full rank".into()));
    }
    let (p, frame) = pair_structure(kind, d, t)?;
    Ok(FramedObservable { observable: sparse_pair_sum(&p)?, frame })
}

/// Applies `(U (x) .. (x) U) X (U (x) .. (x) U)^dagger` one factor at a time.
pub fn conjugate_by_local(x: &ComplexMatrix, space: &TensorSpace, u: &ComplexMatrix) -> Result<ComplexMatrix> {
    crate::matcore::check_operator(x, space)?;
    let total = space.total_dim();
    let mut cur = x.clone();
    for f in 0..space.n_factors() {
        let d = space.dims()[f];
        if u.rows() != d || u.cols() != d {
            return Err(Error::DimensionMismatch("frame unitary does not match the factor dimension".into()));
        }
        let stride = space.stride(f);
        let mut left = ComplexMatrix::zeros(total, total);
        for r in 0..total {
            let a = space.digit(r, f);
            let base = r - a * stride;
            for b in 0..d {
                let coef = u[(a, b)];
                let src = base + b * stride;
                for c in 0..total {
                    left[(r, c)] += coef * cur[(src, c)];
                }
            }
        }
        let mut right = ComplexMatrix::zeros(total, total);
        for c in 0..total {
            let a = space.digit(c, f);
            let base = c - a * stride;
            for b in 0..d {
                let coef = u[(a, b)].conj();
                let src = base + b * stride;
                for r in 0..total {
                    right[(r, c)] += left[(r, src)] * coef;
                }
            }
        }
        cur = right;
    }
    Ok(cur)
}

/// Dense observable in the computational basis.
///
/// For the classical kind the operator is diagonal on `2T` sites of
/// dimension `d`; its value on an outcome is the classical statistic.
pub fn build_observable(kind: &ObservableKind, d: usize, t: usize) -> Result<ComplexMatrix> {
    let framed = build_sparse(kind, d, t)?;
    let dense = framed.observable.to_dense()?;
    match framed.frame {
        Some(u) => conjugate_by_local(&dense, framed.observable.space(), &u),
        None => Ok(dense),
    }
}

/// Per-site states in the working frame of the observable.
pub fn site_states(kind: &ObservableKind, inst: &Instance) -> Result<Vec<ComplexMatrix>> {
    check_instance(kind, inst)?;
    Ok(match (kind, inst) {
        (ObservableKind::KnownState(sigma), Instance::Quantum(e)) => {
            let u = sigma.eigen().vectors;
            e.states().iter().map(|s| s.matrix().conjugate_by(&u)).collect::<Result<_>>()?
        }
        (_, Instance::Quantum(e)) => e.states().iter().map(|s| s.matrix().clone()).collect(),
        (_, Instance::Pair { rho, sigma }) => {
            rho.states().iter().chain(sigma.states()).map(|s| s.matrix().clone()).collect()
        }
        (_, Instance::Classical(p)) => p
            .iter()
            .flat_map(|p| {
                let m = ComplexMatrix::from_real_diagonal(p.probs());
                [m.clone(), m]
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub kind: KindTag,
    pub d: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub gamma: f64,
    /// Divergence the statistic estimates.
    pub mu: f64,
    pub mean_exact: f64,
    pub var_exact: f64,
    pub bias: f64,
    pub bias_bound: f64,
    /// Named terms whose sum, times a calibrated constant, bounds the variance.
    pub var_bound_terms: Vec<BoundTerm>,
}

impl MomentReport {
    pub fn var_bound_sum(&self) -> f64 {
        self.var_bound_terms.iter().map(|t| t.value).sum()
    }
}

/// Distinct sites as `(representative index, multiplicity)`, keyed on the
/// exact bits of the sign and state.
fn site_classes(eps: &[f64], tau: &[ComplexMatrix]) -> Vec<(usize, f64)> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut classes: Vec<(usize, f64)> = Vec::new();
    for (a, (e, t)) in eps.iter().zip(tau).enumerate() {
        let key: Vec<u64> =
            std::iter::once(e.to_bits()).chain(t.as_slice().iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()])).collect();
        match index.get(&key) {
            Some(&g) => classes[g].1 += 1.0,
            None => {
                index.insert(key, classes.len());
                classes.push((a, 1.0));
            }
        }
    }
    classes
}

/// Exact mean and variance of `p` against product site states `tau`.
/// Sites with identical sign and state are handled as one class, so the
/// cost grows with the number of distinct sites.
fn pair_moments(p: &PairSum, tau: &[ComplexMatrix]) -> Result<(f64, f64)> {
    let d = p.d;
    let classes = site_classes(&p.eps, tau);
    let g_count = classes.len();
    let m: Vec<f64> = classes.iter().map(|c| c.1).collect();
    let e: Vec<f64> = classes.iter().map(|c| p.eps[c.0]).collect();
    let ts: Vec<&ComplexMatrix> = classes.iter().map(|c| &tau[c.0]).collect();
    let qm = match &p.kernel {
        Kernel::Swap => None,
        Kernel::Weighted(q) => Some(ComplexMatrix::from_fn(d, d, |i, j| C64::new(0.5 * (q[i] + q[j]), 0.0))),
    };
    let hat: Vec<ComplexMatrix> = match &qm {
        None => ts.iter().map(|&t| t.clone()).collect(),
        Some(qm) => ts.iter().map(|&t| hadamard_div(t, qm)).collect::<Result<_>>()?,
    };
    // k1[g][h] = E[K_ab] for a in class g, b in class h
    let mut k1 = vec![vec![0.0; g_count]; g_count];
    let mut k2 = vec![vec![0.0; g_count]; g_count];
    for g in 0..g_count {
        for h in g..g_count {
            let v = ts[g].trace_product(&hat[h])?.re;
            let w2 = match &p.kernel {
                Kernel::Swap => 1.0,
                Kernel::Weighted(q) => {
                    let mut s = 0.0;
                    for x in 0..d {
                        for y in 0..d {
                            let qq = 0.5 * (q[x] + q[y]);
                            s += ts[g][(x, x)].re * ts[h][(y, y)].re / (qq * qq);
                        }
                    }
                    s
                }
            };
            k1[g][h] = v;
            k1[h][g] = v;
            k2[g][h] = w2;
            k2[h][g] = w2;
        }
    }
    // sum over unordered pairs of distinct sites
    let pairs = |f: &dyn Fn(usize, usize) -> f64| -> f64 {
        let mut all = 0.0;
        let mut same = 0.0;
        for g in 0..g_count {
            for h in 0..g_count {
                all += m[g] * m[h] * f(g, h);
            }
            same += m[g] * f(g, g);
        }
        0.5 * (all - same)
    };
    let mean = p.c + p.w * pairs(&|g, h| e[g] * e[h] * k1[g][h]);
    let pair_var = pairs(&|g, h| k2[g][h] - k1[g][h] * k1[g][h]);
    // sum over b != c, both != a, of eps_b eps_c (Re E[K_ab K_ac] - E[K_ab] E[K_ac])
    let mut total_hat = ComplexMatrix::zeros(d, d);
    let mut total_sq = ComplexMatrix::zeros(d, d);
    let squares: Vec<ComplexMatrix> = hat.iter().map(|h| h * h).collect();
    for g in 0..g_count {
        total_hat += &hat[g].scale(m[g] * e[g]);
        total_sq += &squares[g].scale(m[g]);
    }
    let mut shared = 0.0;
    for g in 0..g_count {
        let r = &total_hat - &hat[g].scale(e[g]);
        let sq = &total_sq - &squares[g];
        let rr = &r * &r;
        let triple = ts[g].trace_product(&rr)?.re - ts[g].trace_product(&sq)?.re;
        let lin: f64 = (0..g_count).map(|h| m[h] * e[h] * k1[g][h]).sum::<f64>() - e[g] * k1[g][g];
        let diag: f64 = (0..g_count).map(|h| m[h] * k1[g][h] * k1[g][h]).sum::<f64>() - k1[g][g] * k1[g][g];
        shared += m[g] * (triple - (lin * lin - diag));
    }
    let var = p.w * p.w * (pair_var + shared);
    Ok((mean, var.max(0.0)))
}

fn classical_moments(q: &ClassicalDistribution, dists: &[ClassicalDistribution]) -> (f64, f64) {
    let d = q.dim();
    let t = dists.len();
    let qv = q.probs();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut reps: Vec<&[f64]> = Vec::new();
    let mut m: Vec<f64> = Vec::new();
    for p in dists {
        let key: Vec<u64> = p.probs().iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&g) => m[g] += 1.0,
            None => {
                index.insert(key, reps.len());
                reps.push(p.probs());
                m.push(1.0);
            }
        }
    }
    let n = reps.len();
    let mut big_p = vec![0.0; d];
    let mut big_p2 = vec![0.0; d];
    for (p, &mg) in reps.iter().zip(&m) {
        for j in 0..d {
            big_p[j] += mg * p[j];
            big_p2[j] += mg * p[j] * p[j];
        }
    }
    let mut g = vec![vec![0.0; n]; n];
    for s in 0..n {
        for u in s..n {
            let v: f64 = (0..d).map(|j| reps[s][j] * reps[u][j] / qv[j]).sum();
            g[s][u] = v;
            g[u][s] = v;
        }
    }
    let tf = t as f64;
    let mean = (0..d).map(|j| big_p[j] * big_p[j] / qv[j]).sum::<f64>() / (tf * tf) - 1.0;
    let mut g_sq = 0.0;
    let mut rows = 0.0;
    for s in 0..n {
        let row: f64 = (0..n).map(|u| m[u] * g[s][u]).sum();
        let row2: f64 = (0..n).map(|u| m[u] * g[s][u] * g[s][u]).sum();
        g_sq += m[s] * row2;
        rows += m[s] * (row * row - row2);
    }
    let term1 = (0..d).map(|j| big_p[j] * big_p[j] / (qv[j] * qv[j])).sum::<f64>() - g_sq;
    let cubic = (0..d).map(|j| big_p[j] * (big_p[j] * big_p[j] - big_p2[j]) / (qv[j] * qv[j])).sum::<f64>();
    let var = (term1 + 2.0 * (cubic - rows)) / tf.powi(4);
    (mean, var.max(0.0))
}

fn term(name: &str, value: f64) -> BoundTerm {
    BoundTerm { name: name.to_string(), value }
}

/// Target divergence for `kind` on `inst`.
pub fn divergence_target(kind: &ObservableKind, inst: &Instance) -> Result<f64> {
    let (d, _) = check_instance(kind, inst)?;
    Ok(match (kind, inst) {
        (ObservableKind::MaximallyMixed, Instance::Quantum(e)) => hs_sq(&average_state(e), &DensityMatrix::maximally_mixed(d))?,
        (ObservableKind::KnownState(sigma), Instance::Quantum(e)) => {
            let eig = sigma.eigen();
            let avg = average_state(e).matrix().conjugate_by(&eig.vectors)?;
            bures_chi2_in_basis(&avg, &eig.values)
        }
        (ObservableKind::UnknownPair, Instance::Pair { rho, sigma }) => hs_sq(&average_state(rho), &average_state(sigma))?,
        (ObservableKind::Classical(q), Instance::Classical(p)) => chi2(&average_distribution(p)?, q)?.as_f64(),
        _ => unreachable!("checked by check_instance"),
    })
}

/// Exact moments of the statistic together with the divergence it
/// estimates and the analytic bias and variance bound terms.
pub fn exact_moments(kind: &ObservableKind, inst: &Instance) -> Result<MomentReport> {
    let (d, t) = check_instance(kind, inst)?;
    let mu = divergence_target(kind, inst)?;
    let gamma = kind.gamma(d);
    let (df, tf) = (d as f64, t as f64);
    let (mean, var) = match (kind, inst) {
        (ObservableKind::Classical(q), Instance::Classical(p)) => classical_moments(q, p),
        _ => {
            let (p, _) = pair_structure(kind, d, t)?;
            let tau = site_states(kind, inst)?;
            pair_moments(&p, &tau)?
        }
    };
    let (bias_bound, var_bound_terms) = match kind.tag() {
        KindTag::MmA => (1.0 / tf, vec![term("mu/T", mu / tf), term("1/T^2", 1.0 / (tf * tf))]),
        KindTag::KnownM => (
            (df / (gamma * tf)).sqrt() * mu.sqrt() + (df - 1.0) / tf,
            vec![
                term("mu/T", mu / tf),
                term("sqrt(d/gamma)*mu^1.5/T", (df / gamma).sqrt() * mu.powf(1.5) / tf),
                term("d^2/T^2", df * df / (tf * tf)),
                term("d*mu/(gamma*T^2)", df * mu / (gamma * tf * tf)),
            ],
        ),
        KindTag::UnknownZ => (2.0 / tf, vec![term("16*mu/T", 16.0 * mu / tf), term("1/T^2", 1.0 / (tf * tf))]),
        KindTag::ClassicalM => (
            0.0,
            vec![
                term("4*mu/(T^2*gamma)", 4.0 * mu / (tf * tf * gamma)),
                term("4*d/T^2", 4.0 * df / (tf * tf)),
                term("2*mu^1.5/(T*sqrt(gamma))", 2.0 * mu.powf(1.5) / (tf * gamma.sqrt())),
                term("mu/T", mu / tf),
            ],
        ),
    };
    Ok(MomentReport { kind: kind.tag(), d, t, gamma, mu, mean_exact: mean, var_exact: var, bias: mean - mu, bias_bound, var_bound_terms })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    /// `avg_t (1 + chi2(rho_t || sigma))`.
    pub lhs: f64,
    /// `sqrt(d/gamma) sqrt(chi2(rho_avg || sigma)) + d`.
    pub rhs: f64,
}

impl ConcavityReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

/// Both sides of the concavity-deficit bound for a full-rank `sigma`.
pub fn concavity_deficit(ens: &ProductEnsemble, sigma: &DensityMatrix) -> Result<ConcavityReport> {
    let d = ens.dim();
    if sigma.dim() != d {
        return Err(Error::DimensionMismatch("reference and ensemble dimensions differ".into()));
    }
    let eig = sigma.eigen();
    let gamma = eig.min_value();
    if gamma <= FULL_RANK_TOL {
        return Err(Error::InvalidParameter("reference must be full rank".into()));
    }
    let mut lhs = 0.0;
    for s in ens.states() {
        lhs += 1.0 + bures_chi2_in_basis(&s.matrix().conjugate_by(&eig.vectors)?, &eig.values);
    }
    lhs /= ens.len() as f64;
    let chi_avg = bures_chi2_in_basis(&average_state(ens).matrix().conjugate_by(&eig.vectors)?, &eig.values);
    let rhs = (d as f64 / gamma).sqrt() * chi_avg.max(0.0).sqrt() + d as f64;
    Ok(ConcavityReport { lhs, rhs })
}

/// As [`concavity_deficit`], failing if the bound is violated beyond rounding.
pub fn concavity_deficit_check(ens: &ProductEnsemble, sigma: &DensityMatrix) -> Result<ConcavityReport> {
    let r = concavity_deficit(ens, sigma)?;
    if !r.holds(1e-9 * r.rhs.max(1.0)) {
        return Err(Error::NumericalViolation(format!("concavity deficit {} exceeds {}", r.lhs, r.rhs)));
    }
    Ok(r)
}

/// `Tr[(R (x) S (x) T) C_12 C_13] = Tr[R (S/Q) (T/Q)]` with everything in
/// the eigenbasis of the reference, whose spectrum is `q`.
pub fn three_site_trace(r: &ComplexMatrix, s: &ComplexMatrix, t: &ComplexMatrix, q: &[f64]) -> Result<C64> {
    let d = q.len();
    let qm = ComplexMatrix::from_fn(d, d, |i, j| C64::new(0.5 * (q[i] + q[j]), 0.0));
    let sq = hadamard_div(s, &qm)?;
    let tq = hadamard_div(t, &qm)?;
    r.trace_product(&(&sq * &tq))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityValue {
    pub lhs: f64,
    pub rhs: f64,
}

impl InequalityValue {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol * self.rhs.abs().max(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiscInequalityReport {
    pub chi2: f64,
    pub gamma: f64,
    /// `Tr[(sigma Delta Delta) C12 C13] <= 2 chi2`.
    pub sigma_delta_delta: InequalityValue,
    /// `Tr[(Delta Delta Delta) C12 C13] <= sqrt(d/gamma) chi2^1.5`.
    pub delta_cubed: InequalityValue,
    /// `Tr[(rho rho) C^2] <= 2 d^2 + (2d/gamma) chi2`.
    pub c_squared: InequalityValue,
    /// `Tr[(rho rho rho) C12 C13] <= 1 + 4 chi2 + sqrt(d/gamma) chi2^1.5`.
    pub rho_cubed: InequalityValue,
    /// `Tr[(sigma sigma sigma) C12 C13]`, which equals 1.
    pub sigma_cubed: f64,
    /// Largest magnitude among the terms with exactly one `Delta`, which vanish.
    pub single_delta_max: f64,
    /// `Tr[(Delta Delta sigma) C12 C13]` and `Tr[(Delta sigma Delta) C12 C13]`, both equal to chi2.
    pub delta_delta_sigma: [f64; 2],
}

impl MiscInequalityReport {
    pub fn inequalities(&self) -> [(&'static str, InequalityValue); 4] {
        [
            ("sigma_delta_delta", self.sigma_delta_delta),
            ("delta_cubed", self.delta_cubed),
            ("c_squared", self.c_squared),
            ("rho_cubed", self.rho_cubed),
        ]
    }
}

/// Evaluates the weighted-swap trace inequalities and identities for a
/// state `rho` and a full-rank reference `sigma`.
pub fn misc_inequalities(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<MiscInequalityReport> {
    let d = rho.dim();
    if sigma.dim() != d {
        return Err(Error::DimensionMismatch("state and reference dimensions differ".into()));
    }
    let eig = sigma.eigen();
    let gamma = eig.min_value();
    if gamma <= FULL_RANK_TOL {
        return Err(Error::InvalidParameter("reference must be full rank".into()));
    }
    let q = &eig.values;
    let r = rho.matrix().conjugate_by(&eig.vectors)?;
    let s = ComplexMatrix::from_real_diagonal(q);
    let delta = &r - &s;
    let chi2 = bures_chi2_in_basis(&r, q);
    let df = d as f64;
    let root = (df / gamma).sqrt();
    let tr = |a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix| three_site_trace(a, b, c, q).map(|z| z.re);
    let mut c_sq = 0.0;
    for x in 0..d {
        for y in 0..d {
            let qq = 0.5 * (q[x] + q[y]);
            c_sq += r[(x, x)].re * r[(y, y)].re / (qq * qq);
        }
    }
    let singles = [tr(&delta, &s, &s)?, tr(&s, &delta, &s)?, tr(&s, &s, &delta)?];
    Ok(MiscInequalityReport {
        chi2,
        gamma,
        sigma_delta_delta: InequalityValue { lhs: tr(&s, &delta, &delta)?, rhs: 2.0 * chi2 },
        delta_cubed: InequalityValue { lhs: tr(&delta, &delta, &delta)?, rhs: root * chi2.powf(1.5) },
        c_squared: InequalityValue { lhs: c_sq, rhs: 2.0 * df * df + 2.0 * df / gamma * chi2 },
        rho_cubed: InequalityValue { lhs: tr(&r, &r, &r)?, rhs: 1.0 + 4.0 * chi2 + root * chi2.powf(1.5) },
        sigma_cubed: tr(&s, &s, &s)?,
        single_delta_max: singles.iter().map(|v| v.abs()).fold(0.0, f64::max),
        delta_delta_sigma: [tr(&delta, &delta, &s)?, tr(&delta, &s, &delta)?],
    })
}

/// As [`misc_inequalities`], failing on any violated inequality or identity.
pub fn misc_inequalities_check(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<MiscInequalityReport> {
    let rep = misc_inequalities(rho, sigma)?;
    for (name, v) in rep.inequalities() {
        if !v.holds(1e-9) {
            return Err(Error::NumericalViolation(format!("{}: {} > {}", name, v.lhs, v.rhs)));
        }
    }
    let scale = 1e-9 * (1.0 + rep.chi2);
    if (rep.sigma_cubed - 1.0).abs() > 1e-9 || rep.single_delta_max > scale {
        return Err(Error::NumericalViolation("weighted-swap identities fail".into()));
    }
    if rep.delta_delta_sigma.iter().any(|v| (v - rep.chi2).abs() > scale) {
        return Err(Error::NumericalViolation("cross term differs from chi2".into()));
    }
    Ok(rep)
}
