use noniid::distances::{bures_chi2, chi2_upper, fidelity, hs_sq, quantum_report, trace_distance};
use noniid::efronstein::{es_decompose, es_marginalize, es_marginalize_iterated, inner_product, local_variance_routes, qes_check, variance, ESContext, Subset};
use noniid::matcore::{eig_hermitian, eigvals_hermitian, partial_trace, permutation_operator, tensor, ComplexMatrix, TensorSpace, C64};
use noniid::observables::{concavity_deficit, misc_inequalities, three_site_trace};
use noniid::states::{average_state, depolarize, perturb_ensemble, random_ensemble, DensityMatrix, GenerationMode, PerturbStyle};
use noniid::testers::{decide, required_t, sample_scale, ChebyshevRule, Verdict};
use noniid::calibration::Calibration;
use noniid::observables::KindTag;
use noniid::rng::stream;
use proptest::prelude::*;
use rand::Rng;

const MODES: [GenerationMode; 3] = [GenerationMode::HaarPure, GenerationMode::GinibreMixed, GenerationMode::DiagonalDirichlet];

fn state(d: usize, mode: usize, seed: u64) -> DensityMatrix {
    random_ensemble(d, 1, MODES[mode % 3], seed).unwrap().states()[0].clone()
}

fn full_rank(d: usize, seed: u64) -> DensityMatrix {
    depolarize(&state(d, 1, seed), 0.05).unwrap()
}

fn matrix(d: usize, seed: u64) -> ComplexMatrix {
    let mut rng = stream(seed, 7);
    ComplexMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn dyadic(d: usize, seed: u64) -> ComplexMatrix {
    let mut rng = stream(seed, 3);
    ComplexMatrix::from_fn(d, d, |_, _| C64::new(rng.random_range(-8i32..=8) as f64 / 4.0, rng.random_range(-8i32..=8) as f64 / 4.0))
}

fn hermitian(d: usize, seed: u64) -> ComplexMatrix {
    matrix(d, seed).hermitian_part()
}

fn unitary(d: usize, seed: u64) -> ComplexMatrix {
    eig_hermitian(&hermitian(d, seed)).unwrap().vectors
}

fn close_mat(a: &ComplexMatrix, b: &ComplexMatrix, tol: f64) -> bool {
    (a - b).max_abs() <= tol
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_trace_is_linear_and_trace_preserving(dims in prop::collection::vec(1usize..=3, 1..=4), mask in 0u32..16, seed: u64) {
        let space = TensorSpace::new(dims.clone()).unwrap();
        let n = space.total_dim();
        let traced: Vec<usize> = (0..dims.len()).filter(|i| mask >> i & 1 == 1).collect();
        let x = matrix(n, seed);
        let y = matrix(n, seed ^ 1);
        let a = C64::new(0.3, -1.1);
        let lhs = partial_trace(&(&x + &y.scale_complex(a)), &space, &traced).unwrap();
        let rhs = &partial_trace(&x, &space, &traced).unwrap() + &partial_trace(&y, &space, &traced).unwrap().scale_complex(a);
        prop_assert!(close_mat(&lhs, &rhs, 1e-12));
        prop_assert!((lhs.trace() - (x.trace() + y.trace() * a)).norm() <= 1e-11);
    }

    #[test]
    fn permutation_operators_compose(n in 1usize..=4, d in 1usize..=3, seed: u64) {
        let space = TensorSpace::uniform(d, n).unwrap();
        let mut rng = stream(seed, 0);
        let mut shuffle = || {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            p
        };
        let a = shuffle();
        let b = shuffle();
        let ab: Vec<usize> = (0..n).map(|i| a[b[i]]).collect();
        let product = &permutation_operator(&space, &a).unwrap() * &permutation_operator(&space, &b).unwrap();
        prop_assert_eq!(product, permutation_operator(&space, &ab).unwrap());
    }

    #[test]
    fn tensor_is_associative(a in 1usize..=3, b in 1usize..=3, c in 1usize..=3, seed: u64) {
        let (x, y, z) = (dyadic(a, seed), dyadic(b, seed ^ 2), dyadic(c, seed ^ 3));
        prop_assert_eq!(tensor(&tensor(&x, &y), &z), tensor(&x, &tensor(&y, &z)));
    }

    #[test]
    fn spectrum_is_unitarily_invariant(d in 1usize..=8, seed: u64) {
        let h = hermitian(d, seed);
        let u = unitary(d, seed ^ 5);
        let conj = &(&u * &h) * &u.adjoint();
        let a = eigvals_hermitian(&h).unwrap();
        let b = eigvals_hermitian(&conj.hermitian_part()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        let e = eig_hermitian(&h).unwrap();
        prop_assert!(close_mat(&e.reconstruct(), &h, 1e-10));
    }

    #[test]
    fn average_commutes_with_depolarizing(d in 1usize..=4, t in 1usize..=6, mode in 0usize..3, lambda in 0.0f64..=1.0, seed: u64) {
        let ens = random_ensemble(d, t, MODES[mode], seed).unwrap();
        let each: Vec<DensityMatrix> = ens.states().iter().map(|s| depolarize(s, lambda).unwrap()).collect();
        let lhs = average_state(&noniid::states::ProductEnsemble::new(each).unwrap());
        let rhs = depolarize(&average_state(&ens), lambda).unwrap();
        prop_assert!(close_mat(lhs.matrix(), rhs.matrix(), 1e-12));
        for s in ens.states() {
            prop_assert!(s.matrix().is_hermitian(1e-12));
            prop_assert!((s.matrix().trace().re - 1.0).abs() <= 1e-12);
            prop_assert!(s.min_eigenvalue() >= -1e-10);
        }
    }

    #[test]
    fn paired_perturbations_average_to_the_reference(d in 2usize..=4, pairs in 1usize..=4, style in 0usize..2, seed: u64) {
        let sigma = full_rank(d, seed);
        let style = [PerturbStyle::Coherent, PerturbStyle::Diagonal][style];
        let ens = perturb_ensemble(&sigma, 0.0, 2 * pairs, style, seed).unwrap();
        prop_assert!(close_mat(average_state(&ens).matrix(), sigma.matrix(), 1e-12));
        prop_assert!(ens.states().iter().all(|s| trace_distance(s, &sigma).unwrap() > 0.0));
    }

    #[test]
    fn divergence_hierarchy(d in 1usize..=8, m1 in 0usize..3, m2 in 0usize..3, seed: u64) {
        let rho = state(d, m1, seed);
        let sigma = state(d, m2, seed ^ 9);
        let r = quantum_report(&rho, &sigma).unwrap();
        let dtr2 = r.trace_distance * r.trace_distance;
        let tol = 1e-10;
        prop_assert!(r.hs_sq / 4.0 <= dtr2 + tol);
        prop_assert!(dtr2 <= d as f64 * r.hs_sq / 4.0 + tol);
        prop_assert!(dtr2 <= r.infidelity + tol);
        prop_assert!(r.infidelity <= r.bures_sq + tol);
        prop_assert!(r.bures_sq <= 2.0 * r.infidelity + tol);
        prop_assert!(r.bures_sq / 2.0 <= r.trace_distance + tol);
        if let (Some(chi), Some(upper)) = (r.bures_chi2.finite(), r.chi2_upper.finite()) {
            prop_assert!(r.bures_sq <= chi + tol);
            prop_assert!(chi <= upper + tol * upper.max(1.0));
        }
    }

    #[test]
    fn divergences_are_unitarily_invariant(d in 1usize..=6, seed: u64) {
        let rho = state(d, 1, seed);
        let sigma = full_rank(d, seed ^ 4);
        let u = unitary(d, seed ^ 8);
        let (ru, su) = (rho.in_basis(&u).unwrap(), sigma.in_basis(&u).unwrap());
        prop_assert!(near(trace_distance(&rho, &sigma).unwrap(), trace_distance(&ru, &su).unwrap(), 1e-9));
        prop_assert!(near(hs_sq(&rho, &sigma).unwrap(), hs_sq(&ru, &su).unwrap(), 1e-9));
        prop_assert!(near(fidelity(&rho, &sigma).unwrap(), fidelity(&ru, &su).unwrap(), 1e-9));
        prop_assert!(near(bures_chi2(&rho, &sigma).unwrap().as_f64(), bures_chi2(&ru, &su).unwrap().as_f64(), 1e-9));
        prop_assert!(near(chi2_upper(&rho, &sigma).unwrap().as_f64(), chi2_upper(&ru, &su).unwrap().as_f64(), 1e-9));
    }

    #[test]
    fn efron_stein_decomposition(dims in prop::collection::vec(1usize..=3, 1..=4), seed: u64) {
        let states: Vec<DensityMatrix> = dims.iter().enumerate().map(|(i, &d)| state(d, i, seed.wrapping_add(i as u64))).collect();
        let ctx = ESContext::new(states).unwrap();
        let n = dims.len();
        let x = hermitian(ctx.space().total_dim(), seed ^ 11);
        let parts = es_decompose(&x, &ctx).unwrap();
        let sum = parts.iter().fold(ComplexMatrix::zeros(x.rows(), x.cols()), |acc, p| &acc + p);
        prop_assert!(close_mat(&sum, &x, 1e-9));
        for (a, pa) in parts.iter().enumerate() {
            for j in Subset(a as u32).indices() {
                prop_assert!(es_marginalize(pa, &ctx, &[j]).unwrap().max_abs() <= 1e-9);
            }
            for pb in parts.iter().skip(a + 1) {
                prop_assert!(inner_product(pa, pb, &ctx).unwrap().norm() <= 1e-9);
            }
        }
        for j in Subset::all(n) {
            let partial = j.subsets().fold(ComplexMatrix::zeros(x.rows(), x.cols()), |acc, i| &acc + &parts[i.0 as usize]);
            let outside = j.complement(n).indices();
            let marg = es_marginalize(&x, &ctx, &outside).unwrap();
            prop_assert!(close_mat(&partial, &marg, 1e-9));
            prop_assert!(close_mat(&marg, &es_marginalize_iterated(&x, &ctx, &outside).unwrap(), 1e-10));
        }
        let var = variance(&x, &ctx).unwrap();
        let energy: f64 = parts.iter().skip(1).map(|p| inner_product(p, p, &ctx).unwrap().re).sum();
        prop_assert!(near(var, energy, 1e-9));
        for i in 0..n {
            let routes = local_variance_routes(&x, &ctx, i).unwrap();
            let local: f64 = parts.iter().enumerate().filter(|(s, _)| Subset(*s as u32).contains(i)).map(|(_, p)| inner_product(p, p, &ctx).unwrap().re).sum();
            prop_assert!(near(routes.via_difference, local, 1e-9));
            prop_assert!(near(routes.via_swap, local, 1e-9));
        }
        let q = qes_check(&x, &ctx).unwrap();
        prop_assert!(q.slack >= -1e-9 * q.sum_local.max(1.0));
    }

    #[test]
    fn decide_is_scale_consistent(stat in -10.0f64..10.0, theta in 1e-3f64..10.0, lambda in 1e-3f64..1e3) {
        let rule = ChebyshevRule::with_theta(theta).unwrap();
        let scaled = ChebyshevRule::with_theta(lambda * theta).unwrap();
        let a = decide(stat, &rule).verdict;
        prop_assert_eq!(a, decide(lambda * stat, &scaled).verdict);
        if a == Verdict::Far {
            prop_assert_eq!(decide(stat + 1.0, &rule).verdict, Verdict::Far);
        }
    }

    #[test]
    fn required_t_follows_the_scale(kind in 0usize..4, theta in 1e-2f64..1.0, d in 1usize..50, gamma_frac in 0.05f64..1.0) {
        let kind = KindTag::ALL[kind];
        let gamma = gamma_frac / d as f64;
        let cal = Calibration::builtin();
        let t = required_t(kind, theta, d, gamma, &cal).unwrap() as f64;
        let exact = cal.sample_constant(kind) * sample_scale(kind, theta, d, gamma);
        prop_assert!(t >= exact - 1e-6 && t < exact.max(1.0) + 1.0);
        prop_assert!(required_t(kind, theta / 2.0, d, gamma, &cal).unwrap() as f64 >= t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weighted_swap_trace_is_positive(d in 1usize..=6, seed: u64) {
        let q = full_rank(d, seed).eigen().values;
        let r = state(d, (seed % 3) as usize, seed ^ 13);
        let s = hermitian(d, seed ^ 17);
        let v = three_site_trace(r.matrix(), &s, &s, &q).unwrap();
        prop_assert!(v.re >= -1e-12 * (1.0 + s.frobenius_norm().powi(2)) / q[d - 1].powi(2));
        prop_assert!(v.im.abs() <= 1e-9 * (1.0 + v.re.abs()));
    }

    #[test]
    fn concavity_deficit_bound(d in 1usize..=4, t in 1usize..=6, mode in 0usize..3, seed: u64) {
        let ens = random_ensemble(d, t, MODES[mode], seed).unwrap();
        let sigma = full_rank(d, seed ^ 21);
        let r = concavity_deficit(&ens, &sigma).unwrap();
        prop_assert!(r.holds(1e-9 * r.rhs.max(1.0)), "{} > {}", r.lhs, r.rhs);
    }

    #[test]
    fn misc_inequalities_hold(d in 1usize..=4, mode in 0usize..3, seed: u64) {
        let rho = state(d, mode, seed);
        let sigma = full_rank(d, seed ^ 3);
        let rep = misc_inequalities(&rho, &sigma).unwrap();
        for (name, v) in rep.inequalities() {
            prop_assert!(v.holds(1e-9), "{}: {} > {}", name, v.lhs, v.rhs);
        }
        prop_assert!((rep.sigma_cubed - 1.0).abs() <= 1e-9);
    }
}
