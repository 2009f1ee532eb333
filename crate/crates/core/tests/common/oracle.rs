//! Brute-force reference computations built directly from definitions.
#![allow(dead_code)]

use noniid::matcore::{swap_operator, tensor_all, ComplexMatrix, TensorSpace, C64};
use noniid::states::{ClassicalDistribution, DensityMatrix, ProductEnsemble};

pub fn dense_expect(states: &[&ComplexMatrix], o: &ComplexMatrix) -> f64 {
    let rho = tensor_all(states.iter().copied());
    (&rho * o).trace().re
}

pub fn dense_mean_var(states: &[&ComplexMatrix], o: &ComplexMatrix) -> (f64, f64) {
    let m = dense_expect(states, o);
    let m2 = dense_expect(states, &(o * o));
    (m, m2 - m * m)
}

fn swap_sum(space: &TensorSpace, pairs: impl Iterator<Item = (usize, usize, f64)>) -> ComplexMatrix {
    let n = space.total_dim();
    let mut acc = ComplexMatrix::zeros(n, n);
    for (i, j, w) in pairs {
        acc += &swap_operator(space, i, j).unwrap().scale(w);
    }
    acc
}

/// `(1/T^2) sum_{i != j} S_ij - I/d`.
pub fn oracle_a(d: usize, t: usize) -> ComplexMatrix {
    let space = TensorSpace::uniform(d, t).unwrap();
    let tt = (t * t) as f64;
    let pairs = (0..t).flat_map(move |i| (0..t).filter(move |&j| j != i).map(move |j| (i, j, 1.0 / tt)));
    let s = swap_sum(&space, pairs);
    &s - &ComplexMatrix::identity(space.total_dim()).scale(1.0 / d as f64)
}

/// `(1/T^2) [sum_{i != j} S^A_ij + sum_{i != j} S^B_ij - 2 sum_{i,j} S^AB_ij]` on `2T` sites.
pub fn oracle_z(d: usize, t: usize) -> ComplexMatrix {
    let space = TensorSpace::uniform(d, 2 * t).unwrap();
    let tt = (t * t) as f64;
    let mut terms = Vec::new();
    for i in 0..t {
        for j in 0..t {
            if i != j {
                terms.push((i, j, 1.0 / tt));
                terms.push((t + i, t + j, 1.0 / tt));
            }
            terms.push((i, t + j, -2.0 / tt));
        }
    }
    swap_sum(&space, terms.into_iter())
}

/// Weighted swap `C_st` in the eigenbasis of the reference with spectrum `q`.
pub fn oracle_c(space: &TensorSpace, s: usize, t: usize, q: &[f64]) -> ComplexMatrix {
    let swap = swap_operator(space, s, t).unwrap();
    let n = space.total_dim();
    let w = ComplexMatrix::from_fn(n, n, |r, c| {
        if r != c {
            return C64::new(0.0, 0.0);
        }
        let (a, b) = (space.digit(r, s), space.digit(r, t));
        C64::new(2.0 / (q[a] + q[b]), 0.0)
    });
    &swap * &w
}

/// `((T-1)/T) (avg_{s<t} C_st - I)`, rotated to the computational basis.
pub fn oracle_m(sigma: &DensityMatrix, t: usize) -> ComplexMatrix {
    let d = sigma.dim();
    let e = sigma.eigen();
    let space = TensorSpace::uniform(d, t).unwrap();
    let n = space.total_dim();
    let pairs = (t * (t - 1) / 2).max(1) as f64;
    let mut avg = ComplexMatrix::zeros(n, n);
    for s in 0..t {
        for u in (s + 1)..t {
            avg += &oracle_c(&space, s, u, &e.values).scale(1.0 / pairs);
        }
    }
    let tf = t as f64;
    let m = (&avg - &ComplexMatrix::identity(n)).scale((tf - 1.0) / tf);
    let u = tensor_all(std::iter::repeat(&e.vectors).take(t));
    &(&u * &m) * &u.adjoint()
}

/// Mean and variance of the classical statistic by enumerating all outcomes.
pub fn oracle_classical(q: &ClassicalDistribution, p: &[ClassicalDistribution]) -> (f64, f64) {
    let d = q.dim();
    let t = p.len();
    let space = TensorSpace::uniform(d, 2 * t).unwrap();
    let (mut m1, mut m2) = (0.0, 0.0);
    for x in 0..space.total_dim() {
        let digits = space.digits(x);
        let (first, second) = digits.split_at(t);
        let mut prob = 1.0;
        for s in 0..t {
            prob *= p[s].probs()[first[s]] * p[s].probs()[second[s]];
        }
        if prob == 0.0 {
            continue;
        }
        let mut c = 0.0;
        for s in 0..t {
            for u in 0..t {
                for j in 0..d {
                    if first[s] == j && second[u] == j {
                        c += 1.0 / q.probs()[j];
                    }
                }
            }
        }
        let v = c / (t * t) as f64 - 1.0;
        m1 += prob * v;
        m2 += prob * v * v;
    }
    (m1, m2 - m1 * m1)
}

pub fn mats(e: &ProductEnsemble) -> Vec<&ComplexMatrix> {
    e.states().iter().map(|s| s.matrix()).collect()
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}
