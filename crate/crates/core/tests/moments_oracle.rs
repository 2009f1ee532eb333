mod common;

use common::oracle::*;
use noniid::observables::{build_observable, exact_moments, Instance, ObservableKind};
use noniid::states::{random_ensemble, ClassicalDistribution, DensityMatrix, GenerationMode, ProductEnsemble};

const MODES: [GenerationMode; 3] = [GenerationMode::HaarPure, GenerationMode::GinibreMixed, GenerationMode::DiagonalDirichlet];

#[test]
fn mm_a_matches_dense_oracle() {
    for (k, &(d, t)) in [(2, 2), (2, 3), (2, 5), (3, 3), (2, 8), (4, 3)].iter().enumerate() {
        let o = oracle_a(d, t);
        let built = build_observable(&ObservableKind::MaximallyMixed, d, t).unwrap();
        assert!((&o - &built).max_abs() < 1e-13);
        for (m, &mode) in MODES.iter().enumerate() {
            let ens = random_ensemble(d, t, mode, (k * 10 + m) as u64).unwrap();
            let (mean, var) = dense_mean_var(&mats(&ens), &o);
            let r = exact_moments(&ObservableKind::MaximallyMixed, &Instance::Quantum(ens)).unwrap();
            assert!(close(r.mean_exact, mean, 1e-10), "mean {} vs {}", r.mean_exact, mean);
            assert!(close(r.var_exact, var, 1e-10), "var {} vs {} (d={}, T={})", r.var_exact, var, d, t);
        }
    }
}

#[test]
fn known_m_matches_dense_oracle() {
    for (k, &(d, t)) in [(2, 2), (2, 3), (2, 6), (3, 3), (3, 4), (4, 2)].iter().enumerate() {
        let sigma = random_ensemble(d, 1, GenerationMode::GinibreMixed, 900 + k as u64).unwrap().states()[0].clone();
        let kind = ObservableKind::KnownState(sigma.clone());
        let o = oracle_m(&sigma, t);
        let built = build_observable(&kind, d, t).unwrap();
        assert!((&o - &built).max_abs() < 1e-9 * o.max_abs().max(1.0), "dense mismatch d={} T={}", d, t);
        for (m, &mode) in MODES.iter().enumerate() {
            let ens = random_ensemble(d, t, mode, (k * 10 + m) as u64).unwrap();
            let (mean, var) = dense_mean_var(&mats(&ens), &o);
            let r = exact_moments(&kind, &Instance::Quantum(ens)).unwrap();
            assert!(close(r.mean_exact, mean, 1e-9), "mean {} vs {}", r.mean_exact, mean);
            assert!(close(r.var_exact, var, 1e-9), "var {} vs {} (d={}, T={})", r.var_exact, var, d, t);
        }
    }
}

#[test]
fn unknown_z_matches_dense_oracle() {
    for (k, &(d, t)) in [(2, 1), (2, 2), (2, 3), (3, 2), (2, 5)].iter().enumerate() {
        let o = oracle_z(d, t);
        let built = build_observable(&ObservableKind::UnknownPair, d, t).unwrap();
        assert!((&o - &built).max_abs() < 1e-13);
        for (m, &mode) in MODES.iter().enumerate() {
            let rho = random_ensemble(d, t, mode, (k * 10 + m) as u64).unwrap();
            let sigma = random_ensemble(d, t, GenerationMode::GinibreMixed, (k * 10 + m + 500) as u64).unwrap();
            let mut all = mats(&rho);
            all.extend(mats(&sigma));
            let (mean, var) = dense_mean_var(&all, &o);
            let r = exact_moments(&ObservableKind::UnknownPair, &Instance::Pair { rho, sigma }).unwrap();
            assert!(close(r.mean_exact, mean, 1e-10), "mean {} vs {}", r.mean_exact, mean);
            assert!(close(r.var_exact, var, 1e-10), "var {} vs {} (d={}, T={})", r.var_exact, var, d, t);
        }
    }
}

#[test]
fn classical_matches_enumeration() {
    for (k, &(d, t)) in [(2, 1), (2, 3), (3, 2), (3, 3), (4, 2), (2, 5)].iter().enumerate() {
        let q = ClassicalDistribution::from_density(&random_ensemble(d, 1, GenerationMode::DiagonalDirichlet, 77 + k as u64).unwrap().states()[0]).unwrap();
        let ens = random_ensemble(d, t, GenerationMode::DiagonalDirichlet, k as u64).unwrap();
        let p = ens.to_distributions(0.0).unwrap();
        let (mean, var) = oracle_classical(&q, &p);
        let kind = ObservableKind::Classical(q.clone());
        let r = exact_moments(&kind, &Instance::Classical(p.clone())).unwrap();
        assert!(close(r.mean_exact, mean, 1e-10), "mean {} vs {}", r.mean_exact, mean);
        assert!(close(r.var_exact, var, 1e-10), "var {} vs {}", r.var_exact, var);
        assert!(close(r.mean_exact, r.mu, 1e-10), "classical statistic is unbiased");
        // the diagonal operator form agrees as well
        let o = build_observable(&kind, d, t).unwrap();
        let site: Vec<_> = p.iter().flat_map(|p| [p.to_density(), p.to_density()]).collect();
        let refs: Vec<_> = site.iter().map(|s| s.matrix()).collect();
        let (m2, v2) = dense_mean_var(&refs, &o);
        assert!(close(m2, mean, 1e-10) && close(v2, var, 1e-10));
    }
}

#[test]
fn uniform_reference_reduces_known_to_mm() {
    for d in [2, 3] {
        let t = 4;
        let ens = random_ensemble(d, t, GenerationMode::GinibreMixed, d as u64).unwrap();
        let a = exact_moments(&ObservableKind::MaximallyMixed, &Instance::Quantum(ens.clone())).unwrap();
        let m = exact_moments(&ObservableKind::KnownState(DensityMatrix::maximally_mixed(d)), &Instance::Quantum(ens)).unwrap();
        let df = d as f64;
        assert!(close(m.mean_exact, df * a.mean_exact + 1.0 / t as f64, 1e-12));
        assert!(close(m.var_exact, df * df * a.var_exact, 1e-12));
        assert!(close(m.mu, df * a.mu, 1e-12));
    }
}

#[test]
fn closed_form_means() {
    // iid pure state under MM_A: A is deterministic with value Tr[rho^2](T-1)/T - 1/d
    let psi = DensityMatrix::basis(2, 0).unwrap();
    let ens = ProductEnsemble::iid(&psi, 6).unwrap();
    let r = exact_moments(&ObservableKind::MaximallyMixed, &Instance::Quantum(ens)).unwrap();
    assert!(close(r.mean_exact, 5.0 / 6.0 - 0.5, 1e-14));
    assert!(r.var_exact.abs() < 1e-14);
    assert!(close(r.mu, 0.5, 1e-14));
}
