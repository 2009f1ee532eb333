//! Dense complex linear algebra on finite tensor products.
//!
//! Matrices are stored row-major. Tensor factors are ordered with the first
//! factor most significant, so basis index `x` of a space with dims
//! `[d_0, .., d_{n-1}]` has digits `x = sum_i x_i * stride_i`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Relative tolerance used when checking Hermiticity.
pub const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for c in 0..self.cols.min(8) {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::DimensionMismatch(format!(
                "{} entries cannot fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        ComplexMatrix { rows, cols, data }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = C64::new(v, 0.0);
        }
        m
    }

    /// Rank-one projector `|v><v|` (the vector is not normalized).
    pub fn outer(v: &[C64]) -> Self {
        let n = v.len();
        Self::from_fn(n, n, |r, c| v[r] * v[c].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        let n = other.cols;
        for r in 0..self.rows {
            let orow = &mut out.data[r * n..(r + 1) * n];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let brow = &other.data[k * n..(k + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Self {
        ComplexMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        ComplexMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `Tr[self * other]` without forming the product.
    pub fn trace_product(&self, other: &Self) -> Result<C64> {
        if self.cols != other.rows || self.rows != other.cols {
            return Err(Error::DimensionMismatch("trace of product needs matching shapes".into()));
        }
        let mut acc = ZERO;
        for r in 0..self.rows {
            for c in 0..self.cols {
                acc += self[(r, c)] * other[(c, r)];
            }
        }
        Ok(acc)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise deviation from Hermiticity.
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev: f64 = 0.0;
        for r in 0..self.rows {
            for c in r..self.cols {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermitian_deviation() <= rel_tol * self.max_abs().max(1.0)
    }

    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    pub fn is_real(&self) -> bool {
        self.data.iter().all(|z| z.im == 0.0)
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
    }

    /// `U^dagger self U`.
    pub fn conjugate_by(&self, u: &Self) -> Result<Self> {
        u.adjoint().matmul(&self.matmul(u)?)
    }

    fn check_same_shape(&self, other: &Self) {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.check_same_shape(rhs);
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.check_same_shape(rhs);
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.check_same_shape(rhs);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

/// Panics on a shape mismatch; use [`ComplexMatrix::matmul`] for a checked product.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

/// Ordered list of local dimensions of a tensor-product space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl TensorSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("local dimensions must be at least 1".into()));
        }
        let mut strides = vec![1usize; dims.len()];
        let mut total: usize = 1;
        for i in (0..dims.len()).rev() {
            strides[i] = total;
            total = total
                .checked_mul(dims[i])
                .ok_or_else(|| Error::DimensionCap { dim: usize::MAX, cap: usize::MAX })?;
        }
        Ok(TensorSpace { dims, strides, total })
    }

    pub fn uniform(d: usize, n: usize) -> Result<Self> {
        Self::new(vec![d; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_factors(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn stride(&self, factor: usize) -> usize {
        self.strides[factor]
    }

    pub fn digit(&self, index: usize, factor: usize) -> usize {
        (index / self.strides[factor]) % self.dims[factor]
    }

    pub fn digits(&self, index: usize) -> Vec<usize> {
        (0..self.dims.len()).map(|i| self.digit(index, i)).collect()
    }

    pub fn index(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.strides).map(|(x, s)| x * s).sum()
    }

    /// Dimension of the sub-product over `factors`.
    pub fn sub_dim(&self, factors: &[usize]) -> usize {
        factors.iter().map(|&i| self.dims[i]).product()
    }

    fn check_factors(&self, factors: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.dims.len()];
        for &f in factors {
            if f >= self.dims.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "factor {} in a space with {} factors",
                    f,
                    self.dims.len()
                )));
            }
            if seen[f] {
                return Err(Error::InvalidParameter(format!("factor {} listed twice", f)));
            }
            seen[f] = true;
        }
        Ok(())
    }

    /// Splits every basis index into (index over `inner`, index over the rest),
    /// both in the factor order of this space. Also returns the inverse table
    /// `compose[a * rest_dim + r]`.
    pub(crate) fn split_table(&self, inner: &[usize]) -> Result<SplitTable> {
        self.check_factors(inner)?;
        let mut inner_sorted = inner.to_vec();
        inner_sorted.sort_unstable();
        let rest: Vec<usize> = (0..self.dims.len()).filter(|i| !inner_sorted.contains(i)).collect();
        let inner_dim = self.sub_dim(&inner_sorted);
        let rest_dim = self.sub_dim(&rest);
        let mut inner_of = vec![0usize; self.total];
        let mut rest_of = vec![0usize; self.total];
        let mut compose = vec![0usize; self.total];
        for x in 0..self.total {
            let mut a = 0;
            for &f in &inner_sorted {
                a = a * self.dims[f] + self.digit(x, f);
            }
            let mut r = 0;
            for &f in &rest {
                r = r * self.dims[f] + self.digit(x, f);
            }
            inner_of[x] = a;
            rest_of[x] = r;
            compose[a * rest_dim + r] = x;
        }
        Ok(SplitTable { inner: inner_sorted, inner_dim, rest_dim, inner_of, rest_of, compose })
    }
}

pub(crate) struct SplitTable {
    pub inner: Vec<usize>,
    pub inner_dim: usize,
    pub rest_dim: usize,
    pub inner_of: Vec<usize>,
    pub rest_of: Vec<usize>,
    pub compose: Vec<usize>,
}

impl SplitTable {
    pub fn full(&self, a: usize, r: usize) -> usize {
        self.compose[a * self.rest_dim + r]
    }
}

/// Kronecker product `a (x) b`.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (br, bc) = (b.rows, b.cols);
    ComplexMatrix::from_fn(a.rows * br, a.cols * bc, |r, c| a[(r / br, c / bc)] * b[(r % br, c % bc)])
}

/// Kronecker product of a list, left to right. The empty product is the 1x1 identity.
pub fn tensor_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    factors.into_iter().fold(ComplexMatrix::identity(1), |acc, f| tensor(&acc, f))
}

/// Partial trace over the listed factors (0-based). The kept factors stay in order.
pub fn partial_trace(x: &ComplexMatrix, space: &TensorSpace, traced: &[usize]) -> Result<ComplexMatrix> {
    check_operator(x, space)?;
    let table = space.split_table(traced)?;
    let kd = table.rest_dim;
    let mut out = ComplexMatrix::zeros(kd, kd);
    for row in 0..space.total_dim() {
        let a = table.inner_of[row];
        let kr = table.rest_of[row];
        for kc in 0..kd {
            let col = table.full(a, kc);
            out[(kr, kc)] += x[(row, col)];
        }
    }
    Ok(out)
}

pub(crate) fn check_operator(x: &ComplexMatrix, space: &TensorSpace) -> Result<()> {
    if !x.is_square() || x.rows() != space.total_dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator is {}x{} but the space has dimension {}",
            x.rows(),
            x.cols(),
            space.total_dim()
        )));
    }
    Ok(())
}

/// Operator moving the content of factor `i` to factor `perm[i]`.
///
/// Composition follows `P(a) P(b) = P(a o b)`.
pub fn permutation_operator(space: &TensorSpace, perm: &[usize]) -> Result<ComplexMatrix> {
    let n = space.n_factors();
    if perm.len() != n {
        return Err(Error::InvalidParameter(format!("permutation has length {} for {} factors", perm.len(), n)));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidParameter(format!("{:?} is not a permutation", perm)));
        }
        seen[p] = true;
    }
    for (i, &p) in perm.iter().enumerate() {
        if space.dims()[i] != space.dims()[p] {
            return Err(Error::UnequalFactorDims(format!(
                "factor {} (dim {}) cannot move to factor {} (dim {})",
                i,
                space.dims()[i],
                p,
                space.dims()[p]
            )));
        }
    }
    let total = space.total_dim();
    let mut out = ComplexMatrix::zeros(total, total);
    let mut target = vec![0usize; n];
    for x in 0..total {
        for (i, &p) in perm.iter().enumerate() {
            target[p] = space.digit(x, i);
        }
        out[(space.index(&target), x)] = ONE;
    }
    Ok(out)
}

/// Swap of factors `i` and `j`.
pub fn swap_operator(space: &TensorSpace, i: usize, j: usize) -> Result<ComplexMatrix> {
    let n = space.n_factors();
    if i >= n || j >= n {
        return Err(Error::IndexOutOfRange(format!("swap ({}, {}) with {} factors", i, j, n)));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.swap(i, j);
    permutation_operator(space, &perm)
}

/// Entrywise quotient with `0/0 = 0`; a nonzero entry over zero is an error.
pub fn hadamard_div(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::DimensionMismatch("Hadamard quotient needs equal shapes".into()));
    }
    let mut out = ComplexMatrix::zeros(a.rows, a.cols);
    for r in 0..a.rows {
        for c in 0..a.cols {
            let (x, y) = (a[(r, c)], b[(r, c)]);
            out[(r, c)] = if y == ZERO {
                if x != ZERO {
                    return Err(Error::DivisionByZero { row: r, col: c });
                }
                ZERO
            } else {
                x / y
            };
        }
    }
    Ok(out)
}

/// Eigenvalues sorted descending with orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.values.len();
        let scaled = ComplexMatrix::from_fn(n, n, |r, c| self.vectors[(r, c)] * self.values[c]);
        &scaled * &self.vectors.adjoint()
    }

    /// Applies `f` to the spectrum: `V f(diag) V^dagger`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        let scaled = ComplexMatrix::from_fn(n, n, |r, c| self.vectors[(r, c)] * fv[c]);
        &scaled * &self.vectors.adjoint()
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Groups indices into connected components of the nonzero pattern.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    /// Components as sorted index lists, ordered by their smallest element.
    pub fn components(mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut slot = vec![usize::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = self.find(i);
            if slot[r] == usize::MAX {
                slot[r] = out.len();
                out.push(Vec::new());
            }
            out[slot[r]].push(i);
        }
        out
    }
}

/// Eigendecomposition of a dense Hermitian block given as row-major data.
/// Returns ascending-unsorted nalgebra output converted to (values, column vectors).
pub(crate) fn eig_block(n: usize, data: &[C64]) -> (Vec<f64>, DMatrix<C64>) {
    if data.iter().all(|z| z.im == 0.0) {
        let m = DMatrix::<f64>::from_fn(n, n, |r, c| 0.5 * (data[r * n + c].re + data[c * n + r].re));
        let eig = SymmetricEigen::new(m);
        let vecs = eig.eigenvectors.map(|v| C64::new(v, 0.0));
        (eig.eigenvalues.iter().copied().collect(), vecs)
    } else {
        let m = DMatrix::<C64>::from_fn(n, n, |r, c| (data[r * n + c] + data[c * n + r].conj()) * 0.5);
        let eig = SymmetricEigen::new(m);
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Block-diagonal structure (after any basis ordering) is detected from the
/// nonzero pattern and each block is diagonalized separately.
pub fn eig_hermitian(h: &ComplexMatrix) -> Result<HermitianEigen> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch(format!("eig of a {}x{} matrix", h.rows, h.cols)));
    }
    let dev = h.hermitian_deviation();
    if dev > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let n = h.rows;
    let mut uf = UnionFind::new(n);
    for r in 0..n {
        for c in (r + 1)..n {
            if h[(r, c)] != ZERO || h[(c, r)] != ZERO {
                uf.union(r, c);
            }
        }
    }
    let mut pairs: Vec<(f64, Vec<(usize, C64)>)> = Vec::with_capacity(n);
    for block in uf.components() {
        let b = block.len();
        let mut data = Vec::with_capacity(b * b);
        for &r in &block {
            for &c in &block {
                data.push(h[(r, c)]);
            }
        }
        let (vals, vecs) = eig_block(b, &data);
        for (k, &v) in vals.iter().enumerate() {
            let col: Vec<(usize, C64)> = block.iter().enumerate().map(|(i, &g)| (g, vecs[(i, k)])).collect();
            pairs.push((v, col));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut vectors = ComplexMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (k, (v, col)) in pairs.into_iter().enumerate() {
        values.push(v);
        for (g, z) in col {
            vectors[(g, k)] = z;
        }
    }
    Ok(HermitianEigen { values, vectors })
}

/// Eigenvalues of a Hermitian matrix, descending.
pub fn eigvals_hermitian(h: &ComplexMatrix) -> Result<Vec<f64>> {
    Ok(eig_hermitian(h)?.values)
}

/// `Tr_first[(rho (x) I) w]` for an operator `w` on `d (x) rest`.
fn contract_first(rho: &ComplexMatrix, w: &[C64], total: usize) -> Vec<C64> {
    let d = rho.rows();
    let rest = total / d;
    let mut out = vec![ZERO; rest * rest];
    for a in 0..d {
        for b in 0..d {
            let coef = rho[(a, b)];
            if coef == ZERO {
                continue;
            }
            for xr in 0..rest {
                let row = (b * rest + xr) * total + a * rest;
                let orow = &mut out[xr * rest..(xr + 1) * rest];
                for (o, v) in orow.iter_mut().zip(&w[row..row + rest]) {
                    *o += coef * v;
                }
            }
        }
    }
    out
}

/// `Tr[(rho_0 (x) .. (x) rho_{n-1}) w]` without forming the product state.
pub fn product_expectation(states: &[&ComplexMatrix], w: &ComplexMatrix) -> Result<C64> {
    let dims: Vec<usize> = states.iter().map(|s| s.rows()).collect();
    let space = TensorSpace::new(dims)?;
    check_operator(w, &space)?;
    let mut total = space.total_dim();
    let mut cur: Vec<C64> = w.as_slice().to_vec();
    for s in states {
        cur = contract_first(s, &cur, total);
        total /= s.rows();
    }
    Ok(cur[0])
}
