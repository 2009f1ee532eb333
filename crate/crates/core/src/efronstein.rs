//! Efron-Stein machinery for operators on a product space, relative to a
//! product reference state `rho_0 (x) .. (x) rho_{n-1}`.
//!
//! Factors are indexed from 0.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{check_operator, product_expectation, swap_operator, tensor, tensor_all, ComplexMatrix, TensorSpace, C64};
use crate::states::DensityMatrix;

/// Largest number of factors handled by the subset machinery.
pub const MAX_FACTORS: usize = 12;
/// Cap on the dimension of the doubled space used by the swap route.
pub const MAX_DOUBLED_DIM: usize = 4096;
/// Relative agreement required between the two local-variance routes.
pub const ROUTE_TOL: f64 = 1e-9;

/// Subset of factor indices stored as a bitmask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Subset(pub u32);

impl Subset {
    pub const EMPTY: Subset = Subset(0);

    pub fn from_indices(idx: &[usize]) -> Subset {
        Subset(idx.iter().fold(0, |m, &i| m | (1 << i)))
    }

    pub fn full(n: usize) -> Subset {
        Subset(((1u64 << n) - 1) as u32)
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self, n: usize) -> Subset {
        Subset(Self::full(n).0 & !self.0)
    }

    pub fn indices(self) -> Vec<usize> {
        (0..32).filter(|&i| self.contains(i)).collect()
    }

    pub fn is_subset_of(self, other: Subset) -> bool {
        self.0 & !other.0 == 0
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = Subset> {
        let full = self.0;
        let mut cur = Some(full);
        std::iter::from_fn(move || {
            let s = cur?;
            cur = if s == 0 { None } else { Some((s - 1) & full) };
            Some(Subset(s))
        })
    }

    /// Every subset of `{0..n-1}` in increasing bitmask order.
    pub fn all(n: usize) -> impl Iterator<Item = Subset> {
        (0..(1u32 << n)).map(Subset)
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices().iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Product reference state together with its tensor structure.
#[derive(Clone, Debug)]
pub struct ESContext {
    space: TensorSpace,
    states: Vec<DensityMatrix>,
}

impl ESContext {
    pub fn new(states: Vec<DensityMatrix>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidParameter("at least one factor is required".into()));
        }
        if states.len() > MAX_FACTORS {
            return Err(Error::InvalidParameter(format!("{} factors exceed the limit of {}", states.len(), MAX_FACTORS)));
        }
        let space = TensorSpace::new(states.iter().map(|s| s.dim()).collect())?;
        Ok(ESContext { space, states })
    }

    pub fn space(&self) -> &TensorSpace {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    /// The product reference state as a dense matrix.
    pub fn reference(&self) -> ComplexMatrix {
        tensor_all(self.states.iter().map(|s| s.matrix()))
    }

    /// `Tr[rho X]`.
    pub fn expectation(&self, x: &ComplexMatrix) -> Result<C64> {
        let mats: Vec<&ComplexMatrix> = self.states.iter().map(|s| s.matrix()).collect();
        product_expectation(&mats, x)
    }
}

fn check_subset(ctx: &ESContext, subset: &[usize]) -> Result<()> {
    for &i in subset {
        if i >= ctx.n() {
            return Err(Error::IndexOutOfRange(format!("factor {} with {} factors", i, ctx.n())));
        }
    }
    Ok(())
}

/// `Tr_I[(sigma_I (x) Id) X] (x) Id_I`, with `sigma_I` the product of `states` over `subset`.
pub(crate) fn marginalize_with(
    x: &ComplexMatrix,
    space: &TensorSpace,
    subset: &[usize],
    states: &[&ComplexMatrix],
) -> Result<ComplexMatrix> {
    check_operator(x, space)?;
    let table = space.split_table(subset)?;
    let local = tensor_all(table.inner.iter().map(|&i| states[i]));
    let (di, dr) = (table.inner_dim, table.rest_dim);
    let mut reduced = ComplexMatrix::zeros(dr, dr);
    for a in 0..di {
        for b in 0..di {
            let coef = local[(a, b)];
            if coef.re == 0.0 && coef.im == 0.0 {
                continue;
            }
            for xr in 0..dr {
                let row = table.full(b, xr);
                for yr in 0..dr {
                    reduced[(xr, yr)] += coef * x[(row, table.full(a, yr))];
                }
            }
        }
    }
    let total = space.total_dim();
    let mut out = ComplexMatrix::zeros(total, total);
    for a in 0..di {
        for xr in 0..dr {
            let row = table.full(a, xr);
            for yr in 0..dr {
                out[(row, table.full(a, yr))] = reduced[(xr, yr)];
            }
        }
    }
    Ok(out)
}

/// Conditional expectation `E_I X` over the factors in `subset`.
pub fn es_marginalize(x: &ComplexMatrix, ctx: &ESContext, subset: &[usize]) -> Result<ComplexMatrix> {
    check_subset(ctx, subset)?;
    let mats: Vec<&ComplexMatrix> = ctx.states.iter().map(|s| s.matrix()).collect();
    marginalize_with(x, &ctx.space, subset, &mats)
}

/// `E_{i_1} E_{i_2} .. X`, one factor at a time in the given order.
pub fn es_marginalize_iterated(x: &ComplexMatrix, ctx: &ESContext, order: &[usize]) -> Result<ComplexMatrix> {
    let mut cur = x.clone();
    for &i in order.iter().rev() {
        cur = es_marginalize(&cur, ctx, &[i])?;
    }
    Ok(cur)
}

/// `D_i X = X - E_i X`.
pub fn es_difference(x: &ComplexMatrix, ctx: &ESContext, i: usize) -> Result<ComplexMatrix> {
    Ok(x - &es_marginalize(x, ctx, &[i])?)
}

/// All marginals `E_S X` indexed by the bitmask of `S`.
fn all_marginals(x: &ComplexMatrix, ctx: &ESContext) -> Result<Vec<ComplexMatrix>> {
    Subset::all(ctx.n()).map(|s| es_marginalize(x, ctx, &s.indices())).collect()
}

fn component_from(marginals: &[ComplexMatrix], n: usize, j: Subset) -> ComplexMatrix {
    let dim = marginals[0].rows();
    let mut out = ComplexMatrix::zeros(dim, dim);
    for i in j.subsets() {
        let m = &marginals[i.complement(n).0 as usize];
        if (j.len() - i.len()) % 2 == 0 {
            out += m;
        } else {
            out = &out - m;
        }
    }
    out
}

/// Component `X^{=J} = sum_{I in J} (-1)^{|J|-|I|} E_{complement of I} X`.
pub fn es_component(x: &ComplexMatrix, ctx: &ESContext, j: Subset) -> Result<ComplexMatrix> {
    if !j.is_subset_of(Subset::full(ctx.n())) {
        return Err(Error::IndexOutOfRange(format!("subset {} with {} factors", j, ctx.n())));
    }
    let n = ctx.n();
    let mut out: Option<ComplexMatrix> = None;
    for i in j.subsets() {
        let m = es_marginalize(x, ctx, &i.complement(n).indices())?;
        let m = if (j.len() - i.len()) % 2 == 0 { m } else { m.scale(-1.0) };
        out = Some(match out {
            None => m,
            Some(acc) => &acc + &m,
        });
    }
    Ok(out.expect("at least the empty subset"))
}

/// Every component, indexed by subset bitmask.
pub fn es_decompose(x: &ComplexMatrix, ctx: &ESContext) -> Result<Vec<ComplexMatrix>> {
    let marg = all_marginals(x, ctx)?;
    Ok(Subset::all(ctx.n()).map(|j| component_from(&marg, ctx.n(), j)).collect())
}

/// `<Y, Z> = Tr[rho Y^dagger Z]`.
pub fn inner_product(y: &ComplexMatrix, z: &ComplexMatrix, ctx: &ESContext) -> Result<C64> {
    ctx.expectation(&y.adjoint().matmul(z)?)
}

fn require_hermitian(x: &ComplexMatrix) -> Result<()> {
    let dev = x.hermitian_deviation();
    if dev > 1e-10 * x.max_abs().max(1.0) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(())
}

/// `E[X^2] - E[X]^2` for Hermitian `X`.
pub fn variance(x: &ComplexMatrix, ctx: &ESContext) -> Result<f64> {
    require_hermitian(x)?;
    let m = ctx.expectation(x)?.re;
    let m2 = ctx.expectation(&x.matmul(x)?)?.re;
    Ok(m2 - m * m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalVarianceRoutes {
    /// `E[(D_i X)^2]` computed directly.
    pub via_difference: f64,
    /// Half the squared commutator-like term on the doubled space.
    pub via_swap: f64,
}

/// Both routes for the local variance `E[(D_i X)^2]`.
///
/// The swap route works on the space extended by one extra copy of factor
/// `i`; the other copies of the doubled space contribute a trace of one and
/// are dropped.
pub fn local_variance_routes(x: &ComplexMatrix, ctx: &ESContext, i: usize) -> Result<LocalVarianceRoutes> {
    check_subset(ctx, &[i])?;
    check_operator(x, &ctx.space)?;
    require_hermitian(x)?;
    let dx = es_difference(x, ctx, i)?;
    let via_difference = ctx.expectation(&dx.matmul(&dx)?)?.re;

    let di = ctx.space.dims()[i];
    let doubled_dim = ctx.space.total_dim() * di;
    if doubled_dim > MAX_DOUBLED_DIM {
        return Err(Error::DimensionCap { dim: doubled_dim, cap: MAX_DOUBLED_DIM });
    }
    let mut dims = ctx.space.dims().to_vec();
    dims.push(di);
    let doubled = TensorSpace::new(dims)?;
    let f = swap_operator(&doubled, i, ctx.n())?;
    let xi = tensor(x, &ComplexMatrix::identity(di));
    let swapped = &(&f * &xi) * &f;
    let y = &xi - &swapped;
    let mut mats: Vec<&ComplexMatrix> = ctx.states.iter().map(|s| s.matrix()).collect();
    mats.push(ctx.states[i].matrix());
    let via_swap = 0.5 * product_expectation(&mats, &y.matmul(&y)?)?.re;
    Ok(LocalVarianceRoutes { via_difference, via_swap })
}

/// `E[(D_i X)^2]`; errors if the two routes disagree.
pub fn local_variance(x: &ComplexMatrix, ctx: &ESContext, i: usize) -> Result<f64> {
    let r = local_variance_routes(x, ctx, i)?;
    let scale = r.via_difference.abs().max(1.0);
    if (r.via_difference - r.via_swap).abs() > ROUTE_TOL * scale {
        return Err(Error::NumericalViolation(format!(
            "local variance routes disagree on factor {}: {} vs {}",
            i, r.via_difference, r.via_swap
        )));
    }
    Ok(r.via_difference)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QesReport {
    pub variance: f64,
    pub sum_local: f64,
    /// `sum_local - variance`, nonnegative up to rounding.
    pub slack: f64,
}

/// Variance against the sum of local variances.
pub fn qes_check(x: &ComplexMatrix, ctx: &ESContext) -> Result<QesReport> {
    let variance = variance(x, ctx)?;
    let mut sum_local = 0.0;
    for i in 0..ctx.n() {
        sum_local += local_variance(x, ctx, i)?;
    }
    Ok(QesReport { variance, sum_local, slack: sum_local - variance })
}

/// Whether `x` acts as the identity outside the factors in `support`.
pub fn is_supported_on(x: &ComplexMatrix, space: &TensorSpace, support: Subset, tol: f64) -> Result<bool> {
    let n = space.n_factors();
    let outside = support.complement(n).indices();
    let mixed: Vec<ComplexMatrix> =
        space.dims().iter().map(|&d| ComplexMatrix::identity(d).scale(1.0 / d as f64)).collect();
    let refs: Vec<&ComplexMatrix> = mixed.iter().collect();
    let m = marginalize_with(x, space, &outside, &refs)?;
    Ok((&m - x).max_abs() <= tol * x.max_abs().max(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLocalReport {
    pub variance: f64,
    /// `4 sum_i E[(D_i X_i)^2]` with `X_i = sum_{j != i} X_ij`.
    pub bound: f64,
    pub slack: f64,
}

/// For `X = sum_{i != j} X_ij` with each symmetric term `X_ij = X_ji` acting
/// on factors `{i, j}` only. Keys are unordered pairs; `(i, j)` and `(j, i)`
/// must not both be present.
pub fn two_local_bound(terms: &BTreeMap<(usize, usize), ComplexMatrix>, ctx: &ESContext) -> Result<TwoLocalReport> {
    let n = ctx.n();
    let dim = ctx.space.total_dim();
    let mut seen = std::collections::BTreeSet::new();
    let mut x = ComplexMatrix::zeros(dim, dim);
    let mut xi: Vec<ComplexMatrix> = vec![ComplexMatrix::zeros(dim, dim); n];
    for (&(i, j), t) in terms {
        if i == j || i >= n || j >= n {
            return Err(Error::IndexOutOfRange(format!("pair ({}, {}) with {} factors", i, j, n)));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(Error::InvalidParameter(format!("pair ({}, {}) given twice", i, j)));
        }
        check_operator(t, &ctx.space)?;
        require_hermitian(t)?;
        if !is_supported_on(t, &ctx.space, Subset::from_indices(&[i, j]), 1e-10)? {
            return Err(Error::Locality(format!("term ({}, {}) acts outside its pair", i, j)));
        }
        let twice = t.scale(2.0);
        x += &twice;
        xi[i] += t;
        xi[j] += t;
    }
    let variance = variance(&x, ctx)?;
    let mut bound = 0.0;
    for (i, op) in xi.iter().enumerate() {
        bound += 4.0 * local_variance(op, ctx, i)?;
    }
    Ok(TwoLocalReport { variance, bound, slack: bound - variance })
}
