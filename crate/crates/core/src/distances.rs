//! Distances and divergences between quantum states and between classical
//! distributions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{eig_hermitian, ComplexMatrix};
use crate::states::{ClassicalDistribution, DensityMatrix};

/// Eigenvalues below this count as zero when testing support inclusion.
pub const SUPPORT_TOL: f64 = 1e-12;

/// A nonnegative real that may be `+inf`. Serializes as a number or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, ExtendedReal::Infinite)
    }

    /// Value as `f64`, with `+inf` for the infinite case.
    pub fn as_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{}", v),
            ExtendedReal::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtendedReal::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(ExtendedReal::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {:?}", s))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumDivergenceReport {
    pub trace_distance: f64,
    pub hs_sq: f64,
    pub fidelity: f64,
    pub infidelity: f64,
    pub bures_sq: f64,
    pub bures_chi2: ExtendedReal,
    pub chi2_upper: ExtendedReal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalDivergenceReport {
    pub tv: f64,
    pub chi2: ExtendedReal,
    pub hellinger_sq: f64,
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("dimensions {} and {} differ", a, b)));
    }
    Ok(())
}

pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), sigma.dim())?;
    let delta = rho.matrix() - sigma.matrix();
    Ok(0.5 * eig_hermitian(&delta)?.values.iter().map(|v| v.abs()).sum::<f64>())
}

/// Squared Hilbert-Schmidt distance `Tr[(rho - sigma)^2]`.
pub fn hs_sq(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), sigma.dim())?;
    Ok((rho.matrix() - sigma.matrix()).as_slice().iter().map(|z| z.norm_sqr()).sum())
}

/// Eigenvalues at rounding level are treated as exact zeros before the
/// square root, so rank-deficient inputs stay stable under a change of basis.
const SQRT_CLIP: f64 = 1e-13;

fn clipped_sqrt(v: f64) -> f64 {
    if v > SQRT_CLIP {
        v.sqrt()
    } else {
        0.0
    }
}

/// `(Tr sqrt(sqrt(sigma) rho sqrt(sigma)))^2`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), sigma.dim())?;
    let root = sigma.eigen().map(clipped_sqrt);
    let inner = &(&root * rho.matrix()) * &root;
    let vals = eig_hermitian(&inner.hermitian_part())?.values;
    let s: f64 = vals.iter().map(|&v| clipped_sqrt(v)).sum();
    Ok((s * s).clamp(0.0, 1.0))
}

/// Bures chi-squared divergence, computed in the eigenbasis of `sigma` as
/// `sum_ij 2 |Delta_ij|^2 / (q_i + q_j)`. Infinite when `rho` has weight
/// outside the support of `sigma`.
pub fn bures_chi2(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<ExtendedReal> {
    check_dims(rho.dim(), sigma.dim())?;
    let eig = sigma.eigen();
    let q: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let delta = (rho.matrix() - sigma.matrix()).conjugate_by(&eig.vectors)?;
    let d = rho.dim();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let den = q[i] + q[j];
            let num = delta[(i, j)].norm_sqr();
            if den <= SUPPORT_TOL {
                if num.sqrt() > SUPPORT_TOL.sqrt() {
                    return Ok(ExtendedReal::Infinite);
                }
                continue;
            }
            acc += 2.0 * num / den;
        }
    }
    Ok(ExtendedReal::Finite(acc))
}

/// `Tr[sigma^{-1} rho^2] - 1`, which dominates the Bures variant.
pub fn chi2_upper(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<ExtendedReal> {
    check_dims(rho.dim(), sigma.dim())?;
    let eig = sigma.eigen();
    let r = rho.matrix().conjugate_by(&eig.vectors)?;
    let r2 = &r * &r;
    let mut acc = 0.0;
    for (i, &q) in eig.values.iter().enumerate() {
        if q <= SUPPORT_TOL {
            // support test on rho itself: (rho^2)_ii is quadratic in the leaked weight
            if r[(i, i)].re > SUPPORT_TOL.sqrt() {
                return Ok(ExtendedReal::Infinite);
            }
            continue;
        }
        acc += r2[(i, i)].re / q;
    }
    Ok(ExtendedReal::Finite((acc - 1.0).max(0.0)))
}

pub fn quantum_report(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<QuantumDivergenceReport> {
    let f = fidelity(rho, sigma)?;
    Ok(QuantumDivergenceReport {
        trace_distance: trace_distance(rho, sigma)?,
        hs_sq: hs_sq(rho, sigma)?,
        fidelity: f,
        infidelity: 1.0 - f,
        bures_sq: 2.0 * (1.0 - f.sqrt()),
        bures_chi2: bures_chi2(rho, sigma)?,
        chi2_upper: chi2_upper(rho, sigma)?,
    })
}

pub fn tv(p: &ClassicalDistribution, q: &ClassicalDistribution) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    Ok(0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

pub fn chi2(p: &ClassicalDistribution, q: &ClassicalDistribution) -> Result<ExtendedReal> {
    check_dims(p.dim(), q.dim())?;
    let mut acc = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        if b == 0.0 {
            if a > 0.0 {
                return Ok(ExtendedReal::Infinite);
            }
            continue;
        }
        acc += (a - b) * (a - b) / b;
    }
    Ok(ExtendedReal::Finite(acc))
}

/// `sum_j (sqrt(p_j) - sqrt(q_j))^2`.
pub fn hellinger_sq(p: &ClassicalDistribution, q: &ClassicalDistribution) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum())
}

pub fn classical_report(p: &ClassicalDistribution, q: &ClassicalDistribution) -> Result<ClassicalDivergenceReport> {
    Ok(ClassicalDivergenceReport { tv: tv(p, q)?, chi2: chi2(p, q)?, hellinger_sq: hellinger_sq(p, q)? })
}

/// Bures chi-squared with `sigma` given by its spectrum and the state already
/// expressed in that eigenbasis. Requires a full-rank `q`.
pub(crate) fn bures_chi2_in_basis(rho: &ComplexMatrix, q: &[f64]) -> f64 {
    let d = q.len();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut delta = rho[(i, j)];
            if i == j {
                delta -= q[i];
            }
            acc += 2.0 * delta.norm_sqr() / (q[i] + q[j]);
        }
    }
    acc
}
