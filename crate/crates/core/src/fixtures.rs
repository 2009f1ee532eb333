//! Reference instances for calibration and acceptance checks.
//!
//! Null instances have their average exactly at the reference while the
//! individual copies vary as much as possible. Far instances put the
//! divergence at twice the closeness parameter.

use crate::error::{Error, Result};
use crate::matcore::ComplexMatrix;
use crate::observables::{Instance, ObservableKind};
use crate::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;

use crate::observables::KindTag;
use crate::states::{
    depolarize, haar_unitary, perturb_ensemble, random_ensemble, random_state, ClassicalDistribution, DensityMatrix,
    GenerationMode, PerturbStyle, ProductEnsemble,
};

#[derive(Clone, Debug)]
pub struct NamedInstance {
    pub name: String,
    pub instance: Instance,
}

fn named(name: &str, instance: Instance) -> NamedInstance {
    NamedInstance { name: name.to_string(), instance }
}

/// Ratio of the far divergence to the closeness parameter.
pub const FAR_FACTOR: f64 = 2.0;

/// Number of distinct random bases cycled through by [`orthonormal_tuples`].
pub const TUPLE_BASES: u64 = 4;

/// Groups of `d` pure states forming random orthonormal bases, cycling
/// through [`TUPLE_BASES`] bases; a remainder shorter than `d` is filled with
/// `I/d`. The average is exactly `I/d`.
pub fn orthonormal_tuples(d: usize, t: usize, seed: u64) -> Result<ProductEnsemble> {
    let bases: Vec<Vec<DensityMatrix>> = (0..TUPLE_BASES)
        .map(|g| {
            let u = haar_unitary(d, &mut stream(seed, g));
            (0..d).map(|k| DensityMatrix::pure(&u.column(k))).collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let mut states = Vec::with_capacity(t);
    let mut g = 0usize;
    while states.len() + d <= t {
        states.extend(bases[g % bases.len()].iter().cloned());
        g += 1;
    }
    while states.len() < t {
        states.push(DensityMatrix::maximally_mixed(d));
    }
    ProductEnsemble::new(states)
}

/// `center +- eta E` pairs around `center` (no shift).
pub fn pairs_around(center: &DensityMatrix, t: usize, style: PerturbStyle, seed: u64) -> Result<ProductEnsemble> {
    perturb_ensemble(center, 0.0, t, style, seed)
}

/// `(1 - s) sigma + s |v><v|`.
fn mix_towards(sigma: &DensityMatrix, v: &[crate::matcore::C64], s: f64) -> Result<DensityMatrix> {
    DensityMatrix::from_trusted(&sigma.matrix().scale(1.0 - s) + &ComplexMatrix::outer(v).scale(s))
}

fn reference_state(kind: &ObservableKind, d: usize) -> DensityMatrix {
    match kind {
        ObservableKind::KnownState(s) => s.clone(),
        ObservableKind::Classical(q) => q.to_density(),
        _ => DensityMatrix::maximally_mixed(d),
    }
}

/// Shifted average at divergence `mu` from the reference: towards a Haar
/// pure state for the Hilbert-Schmidt kinds, towards the least likely
/// eigenvector (or symbol) for the chi-squared kinds. Both divergences are
/// quadratic in the shift.
fn far_center(kind: &ObservableKind, d: usize, mu: f64, seed: u64) -> Result<DensityMatrix> {
    let reference = reference_state(kind, d);
    let e = reference.eigen();
    let (v, unit) = match kind {
        ObservableKind::KnownState(_) | ObservableKind::Classical(_) => {
            let v = e.vectors.column(d - 1);
            let q = e.min_value();
            (v, 1.0 / q - 1.0)
        }
        _ => {
            let u = haar_unitary(d, &mut stream(seed, 0));
            (u.column(0), 1.0 - 1.0 / d as f64)
        }
    };
    let s = (mu / unit).sqrt();
    if !(s <= 1.0 + 1e-12) {
        return Err(Error::Unattainable(format!("divergence {} exceeds the maximum {} reachable from the reference", mu, unit)));
    }
    let s = s.min(1.0);
    if s == 1.0 {
        return DensityMatrix::pure(&v);
    }
    mix_towards(&reference, &v, s)
}

fn classical_of(ens: &ProductEnsemble) -> Result<Vec<ClassicalDistribution>> {
    ens.to_distributions(1e-12)
}

/// Number of distinct directions cycled by [`classical_pairs_around`].
pub const PAIR_DIRECTIONS: u64 = 4;

/// Opposite pairs `q +- eta e` cycling through [`PAIR_DIRECTIONS`] random
/// zero-sum directions, with `eta` at half the admissible range; an odd
/// trailing copy equals `q`. The average is exactly `q` up to rounding.
pub fn classical_pairs_around(q: &ClassicalDistribution, t: usize, seed: u64) -> Result<Vec<ClassicalDistribution>> {
    let d = q.dim();
    let qmin = q.gamma();
    let mut dirs = Vec::new();
    for k in 0..PAIR_DIRECTIONS {
        let mut rng = stream(seed, k);
        let mut e: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = e.iter().sum::<f64>() / d as f64;
        e.iter_mut().for_each(|v| *v -= mean);
        let top = e.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let eta = if top > 0.0 { 0.5 * qmin / top } else { 0.0 };
        let plus: Vec<f64> = q.probs().iter().zip(&e).map(|(a, b)| a + eta * b).collect();
        let minus: Vec<f64> = q.probs().iter().zip(&e).map(|(a, b)| a - eta * b).collect();
        dirs.push((ClassicalDistribution::new(plus)?, ClassicalDistribution::new(minus)?));
    }
    let mut out = Vec::with_capacity(t);
    for k in 0..t / 2 {
        let (plus, minus) = &dirs[k % dirs.len()];
        out.push(plus.clone());
        out.push(minus.clone());
    }
    if t % 2 == 1 {
        out.push(q.clone());
    }
    Ok(out)
}

/// Instances whose average equals the reference.
pub fn null_fixtures(kind: &ObservableKind, d: usize, t: usize, seed: u64) -> Result<Vec<NamedInstance>> {
    let reference = reference_state(kind, d);
    Ok(match kind {
        ObservableKind::MaximallyMixed => vec![
            named("iid_reference", Instance::Quantum(ProductEnsemble::iid(&reference, t)?)),
            named("orthonormal_tuples", Instance::Quantum(orthonormal_tuples(d, t, seed)?)),
            named("coherent_pairs", Instance::Quantum(pairs_around(&reference, t, PerturbStyle::Coherent, seed)?)),
        ],
        ObservableKind::KnownState(_) => vec![
            named("iid_reference", Instance::Quantum(ProductEnsemble::iid(&reference, t)?)),
            named("coherent_pairs", Instance::Quantum(pairs_around(&reference, t, PerturbStyle::Coherent, seed)?)),
            named("diagonal_pairs", Instance::Quantum(pairs_around(&reference, t, PerturbStyle::Diagonal, seed)?)),
        ],
        ObservableKind::UnknownPair => {
            let tau = random_state(d, GenerationMode::GinibreMixed, &mut stream(seed, 7));
            vec![
                named(
                    "iid_same",
                    Instance::Pair { rho: ProductEnsemble::iid(&tau, t)?, sigma: ProductEnsemble::iid(&tau, t)? },
                ),
                named(
                    "mixed_vs_tuples",
                    Instance::Pair { rho: ProductEnsemble::iid(&reference, t)?, sigma: orthonormal_tuples(d, t, seed)? },
                ),
                named(
                    "pairs_vs_iid",
                    Instance::Pair {
                        rho: pairs_around(&tau, t, PerturbStyle::Coherent, seed)?,
                        sigma: ProductEnsemble::iid(&tau, t)?,
                    },
                ),
            ]
        }
        ObservableKind::Classical(q) => vec![
            named("iid_reference", Instance::Classical(vec![q.clone(); t])),
            named("diagonal_pairs", Instance::Classical(classical_pairs_around(q, t, seed)?)),
        ],
    })
}

/// Instances whose divergence from the reference is `FAR_FACTOR * theta`.
pub fn far_fixtures(kind: &ObservableKind, d: usize, t: usize, theta: f64, seed: u64) -> Result<Vec<NamedInstance>> {
    far_fixtures_at(kind, d, t, FAR_FACTOR * theta, seed)
}

/// Instances whose divergence from the reference is `mu`.
pub fn far_fixtures_at(kind: &ObservableKind, d: usize, t: usize, mu: f64, seed: u64) -> Result<Vec<NamedInstance>> {
    let center = far_center(kind, d, mu, seed)?;
    if matches!(kind, ObservableKind::Classical(_)) {
        let p = ClassicalDistribution::from_density(&center)?;
        return Ok(vec![
            named("iid_far", Instance::Classical(vec![p.clone(); t])),
            named("pairs_far", Instance::Classical(classical_pairs_around(&p, t, seed)?)),
        ]);
    }
    let iid = ProductEnsemble::iid(&center, t)?;
    let spread = pairs_around(&center, t, PerturbStyle::Coherent, seed)?;
    Ok(match kind {
        ObservableKind::UnknownPair => {
            let mm = DensityMatrix::maximally_mixed(d);
            vec![
                named("iid_far", Instance::Pair { rho: iid, sigma: ProductEnsemble::iid(&mm, t)? }),
                named("pairs_far_vs_tuples", Instance::Pair { rho: spread, sigma: orthonormal_tuples(d, t, seed)? }),
            ]
        }
        _ => vec![named("iid_far", Instance::Quantum(iid)), named("pairs_far", Instance::Quantum(spread))],
    })
}

/// Full-support distribution with half the symbols at `1/(2d)` and half at
/// `3/(2d)` (the last symbol at `1/d` when `d` is odd), so `gamma = 1/(2d)`.
pub fn two_level_distribution(d: usize) -> ClassicalDistribution {
    let df = d as f64;
    let mut p: Vec<f64> = (0..d).map(|j| if j < d / 2 { 3.0 / (2.0 * df) } else { 1.0 / (2.0 * df) }).collect();
    if d % 2 == 1 {
        p[d - 1] = 1.0 / df;
    }
    ClassicalDistribution::new(p).expect("valid by construction")
}

/// Random full-rank reference: a Ginibre state depolarized by a uniform
/// amount in `[0.05, 1]`, so `gamma >= 0.05 / d`.
pub fn random_reference(d: usize, diagonal: bool, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let mode = if diagonal { GenerationMode::DiagonalDirichlet } else { GenerationMode::GinibreMixed };
    let base = random_state(d, mode, rng);
    depolarize(&base, rng.random_range(0.05..=1.0)).expect("lambda in range")
}

/// Random ensemble of length `t` drawn from one of several families: iid,
/// independent mixed, independent pure, spread around `center` with the
/// average fixed, or shifted away from `center` by a random trace distance.
pub fn random_family(center: &DensityMatrix, t: usize, diagonal: bool, rng: &mut ChaCha8Rng) -> Result<ProductEnsemble> {
    let d = center.dim();
    let seed: u64 = rng.random();
    let style = if diagonal { PerturbStyle::Diagonal } else { PerturbStyle::Coherent };
    let free = |mode: GenerationMode| random_ensemble(d, t, if diagonal { GenerationMode::DiagonalDirichlet } else { mode }, seed);
    match rng.random_range(0..6) {
        0 => ProductEnsemble::iid(center, t),
        1 => free(GenerationMode::GinibreMixed),
        2 => free(GenerationMode::HaarPure),
        3 => pairs_around(center, t, style, seed),
        _ => {
            let target = rng.random_range(0.0..0.3);
            perturb_ensemble(center, target, t, style, seed).or_else(|_| pairs_around(center, t, style, seed))
        }
    }
}

/// Random kind and instance of the given tag, dimension and length, fully
/// determined by `seed`.
pub fn random_instance(tag: KindTag, d: usize, t: usize, seed: u64) -> Result<(ObservableKind, Instance)> {
    let mut rng = stream(seed, 0);
    Ok(match tag {
        KindTag::MmA => {
            let center = random_state(d, GenerationMode::GinibreMixed, &mut rng);
            let center = if rng.random_bool(0.3) { DensityMatrix::maximally_mixed(d) } else { center };
            (ObservableKind::MaximallyMixed, Instance::Quantum(random_family(&center, t, false, &mut rng)?))
        }
        KindTag::KnownM => {
            let sigma = random_reference(d, false, &mut rng);
            let ens = random_family(&sigma, t, false, &mut rng)?;
            (ObservableKind::KnownState(sigma), Instance::Quantum(ens))
        }
        KindTag::UnknownZ => {
            let center = random_state(d, GenerationMode::GinibreMixed, &mut rng);
            let rho = random_family(&center, t, false, &mut rng)?;
            let sigma = random_family(&center, t, false, &mut rng)?;
            (ObservableKind::UnknownPair, Instance::Pair { rho, sigma })
        }
        KindTag::ClassicalM => {
            let q = random_reference(d, true, &mut rng);
            let ens = random_family(&q, t, true, &mut rng)?;
            (ObservableKind::Classical(ClassicalDistribution::from_density(&q)?), Instance::Classical(classical_of(&ens)?))
        }
    })
}
