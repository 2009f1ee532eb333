//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use noniid::calibration::Calibration;
use noniid::distances::{chi2_upper, hs_sq, quantum_report, ExtendedReal};
use noniid::fixtures::{far_fixtures, null_fixtures, orthonormal_tuples, random_instance, two_level_distribution, NamedInstance};
use noniid::matcore::ComplexMatrix;
use noniid::observables::{exact_moments, Instance, KindTag, MomentReport, ObservableKind};
use noniid::rng::{hash64, stream};
use noniid::simulate::{count_far, RateEstimate};
use noniid::states::{average_state, random_ensemble, DensityMatrix, GenerationMode, ProductEnsemble};
use noniid::sweep::variance_instance;
use noniid::testers::{required_t, ChebyshevRule, PreparedTester};
use noniid::verify::{self, Suite, VerifyOptions};
use noniid_cli::error::EXIT_VIOLATION;
use oracle::{dense_mean_var, mats, oracle_a, oracle_classical, oracle_m, oracle_z};
use rand::Rng;

/// Seed family for this suite, disjoint from the calibration seeds.
const SUITE_SEED: u64 = 0x6163_6365_7074;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Absolute floor below which a moment counts as zero.
const ZERO_FLOOR: f64 = 1e-14;

fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff <= ZERO_FLOOR {
        return 0.0;
    }
    diff / a.abs().max(b.abs())
}

/// `lhs <= rhs` up to floating-point rounding at the scale of the operands.
fn holds(lhs: f64, rhs: f64, tol: f64) -> bool {
    lhs <= rhs + tol * lhs.abs().max(rhs.abs()).max(1.0)
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let report = verify::run(Suite::EfronStein, &VerifyOptions { instances: 500, seed: SUITE_SEED, mutate: None });
    let elapsed = start.elapsed();
    let report = match report {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("suite error: {}", e)),
    };
    let wanted = ["es_reconstruction", "es_orthogonality", "es_annihilation", "es_parseval", "es_variance_sum", "qes"];
    let mut failures = Vec::new();
    let mut worst = f64::INFINITY;
    for name in wanted {
        match report.check(name) {
            Some(c) if c.passed() && c.evaluated >= 500 => worst = worst.min(c.worst_slack.unwrap_or(0.0)),
            Some(c) => failures.push(format!("{} ({} violations of {})", name, c.violations, c.evaluated)),
            None => failures.push(format!("{} missing", name)),
        }
    }
    let fast = elapsed < Duration::from_secs(120);
    verdict(
        failures.is_empty() && fast,
        format!("500 instances, worst slack {:.2e}, {:.1?}{}", worst, elapsed, if failures.is_empty() { String::new() } else { format!("; failed {:?}", failures) }),
    )
}

fn dims_for(tag: KindTag, rng: &mut impl Rng) -> (usize, usize) {
    // Dense sizes stay at or below 512 (4096 for classical enumeration).
    let choices: &[(usize, usize)] = match tag {
        KindTag::MmA | KindTag::KnownM => &[(2, 1), (2, 2), (2, 3), (2, 4), (2, 5), (2, 6), (2, 7), (2, 8), (2, 9), (3, 2), (3, 3), (3, 4), (3, 5), (4, 2), (4, 3), (4, 4)],
        KindTag::UnknownZ => &[(2, 1), (2, 2), (2, 3), (2, 4), (3, 1), (3, 2), (4, 1), (4, 2)],
        KindTag::ClassicalM => &[(2, 1), (2, 2), (2, 3), (2, 4), (2, 5), (2, 6), (3, 2), (3, 3), (4, 2), (4, 3), (5, 2), (6, 2)],
    };
    choices[rng.random_range(0..choices.len())]
}

fn criterion_2() -> Verdict {
    const PER_KIND: u64 = 200;
    const TOL: f64 = 1e-9;
    let mut lines = Vec::new();
    let mut pass = true;
    let mut cache: HashMap<(KindTag, usize, usize), ComplexMatrix> = HashMap::new();
    for tag in KindTag::ALL {
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for i in 0..PER_KIND {
            let seed = hash64(SUITE_SEED ^ 2, (tag as u64) << 32 | i);
            let (d, t) = dims_for(tag, &mut stream(seed, 9));
            let (kind, inst) = random_instance(tag, d, t, seed).expect("valid instance");
            let r = exact_moments(&kind, &inst).expect("moments");
            let (mean, var) = match (&kind, &inst) {
                (ObservableKind::MaximallyMixed, Instance::Quantum(e)) => {
                    let o = cache.entry((tag, d, t)).or_insert_with(|| oracle_a(d, t));
                    dense_mean_var(&mats(e), o)
                }
                (ObservableKind::KnownState(sigma), Instance::Quantum(e)) => dense_mean_var(&mats(e), &oracle_m(sigma, t)),
                (ObservableKind::UnknownPair, Instance::Pair { rho, sigma }) => {
                    let o = cache.entry((tag, d, t)).or_insert_with(|| oracle_z(d, t));
                    let mut all = mats(rho);
                    all.extend(mats(sigma));
                    dense_mean_var(&all, o)
                }
                (ObservableKind::Classical(q), Instance::Classical(p)) => oracle_classical(q, p),
                _ => unreachable!("random_instance pairs kinds with instances"),
            };
            let e = rel_err(r.mean_exact, mean).max(rel_err(r.var_exact, var));
            worst = worst.max(e);
            if e > TOL {
                failures += 1;
            }
        }
        pass &= failures == 0;
        lines.push(format!("{} {} instances worst rel {:.1e}", tag, PER_KIND, worst));
    }
    verdict(pass, lines.join(", "))
}

fn instance_stream(tag: KindTag, salt: u64, n: u64) -> impl Iterator<Item = (ObservableKind, Instance, MomentReport)> {
    (0..n).map(move |i| {
        let seed = hash64(SUITE_SEED ^ salt, (tag as u64) << 32 | i);
        let (kind, inst) = variance_instance(tag, seed).expect("valid instance");
        let r = exact_moments(&kind, &inst).expect("moments");
        (kind, inst, r)
    })
}

fn criterion_3() -> Verdict {
    const N: u64 = 10_000;
    let mut lines = Vec::new();
    let mut pass = true;
    for tag in [KindTag::MmA, KindTag::UnknownZ, KindTag::KnownM] {
        let mut violations = 0;
        let mut worst = f64::INFINITY;
        for (_, _, r) in instance_stream(tag, 3, N) {
            let (t, d) = (r.t as f64, r.d as f64);
            let bound = match tag {
                KindTag::MmA => 1.0 / t,
                KindTag::UnknownZ => 2.0 / t,
                _ => (d / (r.gamma * t)).sqrt() * r.mu.max(0.0).sqrt() + (d - 1.0) / t,
            };
            let bias = (r.mean_exact - r.mu).abs();
            worst = worst.min((bound - bias) / bound.max(1e-300));
            if !holds(bias, bound, 1e-12) {
                violations += 1;
            }
        }
        pass &= violations == 0;
        lines.push(format!("{} {}/{} violations (min relative slack {:.2e})", tag, violations, N, worst));
    }
    verdict(pass, lines.join(", "))
}

fn criterion_4() -> Verdict {
    const N: u64 = 10_000;
    let cal = Calibration::builtin();
    let mut lines = Vec::new();
    let mut pass = true;
    for tag in KindTag::ALL {
        let k = cal.variance_constant(tag);
        let mut violations = 0;
        let mut worst_ratio: f64 = 0.0;
        for (_, _, r) in instance_stream(tag, 4, N) {
            let (t, d, g, mu) = (r.t as f64, r.d as f64, r.gamma, r.mu.max(0.0));
            let terms = match tag {
                KindTag::MmA => mu / t + 1.0 / (t * t),
                KindTag::KnownM => mu / t + (d / g).sqrt() * mu.powf(1.5) / t + d * d / (t * t) + d * mu / (g * t * t),
                KindTag::UnknownZ => 16.0 * mu / t + 1.0 / (t * t),
                KindTag::ClassicalM => 4.0 * mu / (t * t * g) + 4.0 * d / (t * t) + 2.0 * mu.powf(1.5) / (t * g.sqrt()) + mu / t,
            };
            worst_ratio = worst_ratio.max(r.var_exact / terms);
            if !holds(r.var_exact, k * terms, 1e-12) {
                violations += 1;
            }
        }
        pass &= violations == 0;
        lines.push(format!("{} K={} {}/{} violations (max Var/terms {:.3})", tag, k, violations, N, worst_ratio));
    }
    verdict(pass, lines.join(", "))
}

fn criterion_5() -> Verdict {
    const N: u64 = 10_000;
    const TOL: f64 = 1e-9;
    let names = [
        "hs/4 <= dtr^2",
        "dtr^2 <= d hs/4",
        "bures^2/2 <= dtr^2",
        "dtr^2 <= infid",
        "infid <= bures^2",
        "bures^2 <= 2 infid",
        "bures^2 <= bures_chi2",
        "bures_chi2 <= tr[s^-1 r^2]-1",
        "concavity deficit",
    ];
    let mut violations = [0usize; 9];
    let mut evaluated = [0usize; 9];
    let mut example: Option<String> = None;
    let mut tally = |k: usize, lhs: f64, rhs: f64| {
        evaluated[k] += 1;
        if !holds(lhs, rhs, TOL) {
            violations[k] += 1;
            true
        } else {
            false
        }
    };
    for i in 0..N {
        let seed = hash64(SUITE_SEED ^ 5, i);
        let (rho, sigma) = verify::random_state_pair(seed);
        let d = rho.dim() as f64;
        let r = quantum_report(&rho, &sigma).expect("report");
        let hs = hs_sq(&rho, &sigma).expect("hs");
        let dtr2 = r.trace_distance * r.trace_distance;
        tally(0, hs / 4.0, dtr2);
        tally(1, dtr2, d * hs / 4.0);
        if tally(2, 0.5 * r.bures_sq, dtr2) && example.is_none() {
            example = Some(format!("d={} bures^2/2={:.3e} dtr^2={:.3e}", d, 0.5 * r.bures_sq, dtr2));
        }
        tally(3, dtr2, r.infidelity);
        tally(4, r.infidelity, r.bures_sq);
        tally(5, r.bures_sq, 2.0 * r.infidelity);
        match (r.bures_chi2, chi2_upper(&rho, &sigma).expect("upper")) {
            (ExtendedReal::Finite(bc), ExtendedReal::Finite(up)) => {
                tally(6, r.bures_sq, bc);
                tally(7, bc, up);
            }
            (ExtendedReal::Finite(bc), ExtendedReal::Infinite) => {
                tally(6, r.bures_sq, bc);
            }
            (ExtendedReal::Infinite, ExtendedReal::Finite(_)) => {
                tally(7, 1.0, 0.0);
            }
            (ExtendedReal::Infinite, ExtendedReal::Infinite) => {}
        }
        let eig = sigma.eigen();
        let gamma = eig.min_value();
        if gamma > 1e-9 {
            let mut rng = stream(seed, 3);
            let t = rng.random_range(2..=4);
            let mode = [GenerationMode::HaarPure, GenerationMode::GinibreMixed, GenerationMode::DiagonalDirichlet][rng.random_range(0..3)];
            let ens = random_ensemble(rho.dim(), t, mode, seed).expect("ensemble");
            let chi = |s: &DensityMatrix| quantum_report(s, &sigma).expect("report").bures_chi2.as_f64();
            let lhs = ens.states().iter().map(|s| 1.0 + chi(s)).sum::<f64>() / t as f64;
            let rhs = (d / gamma).sqrt() * chi(&average_state(&ens)).max(0.0).sqrt() + d;
            tally(8, lhs, rhs);
        }
    }
    let pass = violations.iter().all(|&v| v == 0);
    let parts: Vec<String> = names.iter().zip(violations.iter().zip(&evaluated)).map(|(n, (v, e))| format!("{} {}/{}", n, v, e)).collect();
    let mut detail = parts.join(", ");
    if let Some(ex) = example {
        detail += &format!("; first counterexample {}", ex);
    }
    verdict(pass, detail)
}

fn rates(label: &str, fixtures: &[NamedInstance], kind: &ObservableKind, rule: &ChebyshevRule, trials: u64, seed: u64) -> Vec<(String, RateEstimate)> {
    fixtures
        .iter()
        .map(|f| {
            let tester = PreparedTester::new(kind, &f.instance, *rule).expect("tester");
            (format!("{}:{}", label, f.name), RateEstimate::from_counts(count_far(&tester, trials, seed), trials))
        })
        .collect()
}

fn power_verdict(null: &[(String, RateEstimate)], far: &[(String, RateEstimate)], limit: Duration, elapsed: Duration) -> Verdict {
    let null_ok = null.iter().all(|(_, r)| r.far_rate <= 0.02);
    let far_ok = far.iter().all(|(_, r)| r.far_rate >= 0.95);
    let fmt = |(n, r): &(String, RateEstimate)| format!("{} {:.4} [{:.4},{:.4}]", n, r.far_rate, r.wilson_low, r.wilson_high);
    let detail = format!(
        "null FAR rates {}; far FAR rates {}; {:.1?}",
        null.iter().map(fmt).collect::<Vec<_>>().join(", "),
        far.iter().map(fmt).collect::<Vec<_>>().join(", "),
        elapsed
    );
    verdict(null_ok && far_ok && elapsed < limit, detail)
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let (d, theta, trials) = (2, 0.25, 1000);
    let kind = ObservableKind::MaximallyMixed;
    let t = required_t(KindTag::MmA, theta, d, kind.gamma(d), &Calibration::builtin()).expect("T");
    let rule = ChebyshevRule::with_theta(theta).expect("rule");
    let mut nulls = null_fixtures(&kind, d, t, SUITE_SEED).expect("fixtures");
    for s in 1..=3 {
        nulls.push(NamedInstance { name: format!("orthonormal_tuples_{}", s), instance: Instance::Quantum(orthonormal_tuples(d, t, SUITE_SEED + s).expect("tuples")) });
    }
    let fars = far_fixtures(&kind, d, t, theta, SUITE_SEED).expect("fixtures");
    let null = rates(&format!("T={}", t), &nulls, &kind, &rule, trials, SUITE_SEED);
    let far = rates(&format!("T={}", t), &fars, &kind, &rule, trials, SUITE_SEED);
    power_verdict(&null, &far, Duration::from_secs(600), start.elapsed())
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let (d, theta, trials) = (200, 0.5, 1000);
    let q = two_level_distribution(d);
    let kind = ObservableKind::Classical(q);
    let t = required_t(KindTag::ClassicalM, theta, d, kind.gamma(d), &Calibration::builtin()).expect("T");
    let rule = ChebyshevRule::with_theta(theta).expect("rule");
    let nulls = null_fixtures(&kind, d, t, SUITE_SEED).expect("fixtures");
    let fars = far_fixtures(&kind, d, t, theta, SUITE_SEED).expect("fixtures");
    let null = rates(&format!("T={}", t), &nulls, &kind, &rule, trials, SUITE_SEED);
    let far = rates(&format!("T={}", t), &fars, &kind, &rule, trials, SUITE_SEED);
    power_verdict(&null, &far, Duration::from_secs(300), start.elapsed())
}

fn doubled(e: &ProductEnsemble) -> ProductEnsemble {
    let mut states = e.states().to_vec();
    states.extend_from_slice(e.states());
    ProductEnsemble::new(states).expect("same dimension")
}

fn criterion_8() -> Verdict {
    let far = DensityMatrix::diagonal(&[0.85, 0.15]).expect("state");
    let mixed = DensityMatrix::maximally_mixed(2);
    let mut lines = Vec::new();
    let mut pass = true;
    for t in [64usize, 256] {
        let base = noniid::fixtures::pairs_around(&far, t, noniid::states::PerturbStyle::Coherent, SUITE_SEED).expect("pairs");
        let cases = [
            ("A", ObservableKind::MaximallyMixed, Instance::Quantum(base.clone()), Instance::Quantum(doubled(&base))),
            (
                "Z",
                ObservableKind::UnknownPair,
                Instance::Pair { rho: base.clone(), sigma: ProductEnsemble::iid(&mixed, t).expect("iid") },
                Instance::Pair { rho: doubled(&base), sigma: ProductEnsemble::iid(&mixed, 2 * t).expect("iid") },
            ),
        ];
        for (name, kind, one, two) in cases {
            let v1 = exact_moments(&kind, &one).expect("moments").var_exact;
            let v2 = exact_moments(&kind, &two).expect("moments").var_exact;
            let ratio = v1 / v2;
            pass &= (1.7..=2.3).contains(&ratio);
            lines.push(format!("{} T={}->{} ratio {:.4}", name, t, 2 * t, ratio));
        }
    }
    verdict(pass, lines.join(", "))
}

/// The `noniid` binary from the same target directory, built on demand.
fn cli_binary() -> Result<PathBuf, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let dir = exe.parent().and_then(Path::parent).ok_or("test binary has no target directory")?;
    let bin = dir.join(format!("noniid{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
        let status = Command::new(cargo)
            .args(["build", "-p", "noniid-cli", "--bin", "noniid"])
            .status()
            .map_err(|e| format!("cannot build the CLI: {}", e))?;
        if !status.success() || !bin.exists() {
            return Err(format!("CLI binary missing at {}", bin.display()));
        }
    }
    Ok(bin)
}

fn criterion_9() -> Verdict {
    let bin = match cli_binary() {
        Ok(bin) => bin,
        Err(e) => return verdict(false, e),
    };
    let clean = Command::new(&bin).args(["verify", "--out", "/dev/null"]).output().expect("binary runs");
    let mutated = Command::new(&bin).args(["verify", "--suite", "distances", "--mutate", "dtr_sq_le_infid", "--out", "/dev/null"]).output().expect("binary runs");
    let (c, m) = (clean.status.code(), mutated.status.code());
    verdict(c == Some(0) && m == Some(EXIT_VIOLATION), format!("clean exit {:?}, mutated exit {:?}", c, m))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("Efron-Stein suite", criterion_1),
        ("exact moments match dense brute force", criterion_2),
        ("bias bounds", criterion_3),
        ("calibrated variance bounds", criterion_4),
        ("divergence hierarchy", criterion_5),
        ("quantum power, MM_A d=2 theta=0.25", criterion_6),
        ("classical power, d=200 theta=0.5", criterion_7),
        ("variance halves when T doubles", criterion_8),
        ("verify gate and mutation", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.ends_with(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("{} {}: {} ({:.1?}) {}", if v.pass { "PASS" } else { "FAIL" }, label, name, start.elapsed(), v.detail);
    }
    if failed > 0 {
        println!("{} criteria failed", failed);
        std::process::exit(1);
    }
}
