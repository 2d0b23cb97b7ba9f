use emz::galerkin::{Assembly, AssemblyParams, Observable, KERNEL_TOL};
use emz::hypo::{self, HypoConstants, Target};
use emz::model::Potential;

fn build(pot: Potential, n: usize, names: &[&str]) -> Assembly {
    let obs: Vec<Observable> = names.iter().map(|s| Observable::Named(s.to_string())).collect();
    Assembly::build(&pot, &AssemblyParams::new(1.0, 1.0, n, n), &obs).unwrap()
}

#[test]
fn harmonic_constants() {
    let asm = build(Potential::harmonic(1.0), 16, &["p", "q"]);
    let c = hypo::estimate_constants(&asm, true).unwrap();
    assert!((c.lambda_m - 1.0).abs() < 1e-8);
    assert!((c.lambda_big_m - 1.0).abs() < 1e-6);
    assert!(c.c1 > 0.0 && c.c2 > 0.0 && c.c3 > 0.0);
    assert_eq!(c.c4, 0.0);
}

#[test]
fn no_observables_means_no_perturbation() {
    let asm = build(Potential::harmonic(1.0), 12, &["p"]);
    let c = hypo::estimate_constants(&asm, false).unwrap();
    assert_eq!(c.c4, 0.0);
}

#[test]
fn certificates_respect_the_spectral_gap() {
    let asm = build(Potential::harmonic(1.0), 16, &["p", "q"]);
    let c = hypo::estimate_constants(&asm, true).unwrap();
    let gk = asm.spectrum_k(KERNEL_TOL).unwrap().gap;
    let k = hypo::certify(&c, Target::K, 200, 200, gk);
    assert!(k.success && k.kappa > 0.0 && k.lambda_cert > 0.0);
    assert!(k.lambda_cert <= 0.5 + 1e-8);
    assert!(k.c_cert >= 1.0);
    let q = hypo::certify(&c, Target::QKQ, 200, 200, None);
    assert!(q.lambda_cert <= k.lambda_cert);
}

#[test]
fn perturbation_never_raises_the_rate() {
    let base = HypoConstants {
        lambda_m: 1.0,
        lambda_big_m: 1.0,
        c1: 0.5,
        c2: 1.0,
        c3: 1.0,
        c4: 0.0,
        c4_t: 0.0,
        proof_chain_ratio: 0.0,
        proof_chain_holds: true,
        a_adj_pi_norm: 0.0,
    };
    let plain = hypo::certify(&base, Target::K, 100, 100, None);
    let worse = hypo::certify(&HypoConstants { c4: 0.7, ..base.clone() }, Target::QKQ, 100, 100, None);
    assert!(plain.success && worse.lambda_cert <= plain.lambda_cert);
    assert!(hypo::kappa(1.0, 1.0, 1.0, 0.25, 0.01) > 0.0);
    let inf = hypo::certify(&HypoConstants { c4: f64::INFINITY, ..base }, Target::QKQ, 100, 100, None);
    assert!(!inf.success && inf.reason.is_some());
}

#[test]
fn entropy_of_zero_stays_zero() {
    let asm = build(Potential::harmonic(1.0), 10, &["p"]);
    let n = asm.basis.dim();
    let z = hypo::k_subspace(n);
    let h = hypo::entropy_monitor(asm.a.as_ref(), 0.05, asm.gen.k.as_ref(), z.as_ref(), &vec![0.0; n], 2.0, 0.1).unwrap();
    assert!(h.h.iter().all(|v| *v == 0.0));
}

#[test]
fn entropy_decays_along_harmonic_flow() {
    let asm = build(Potential::harmonic(1.0), 16, &["p", "q"]);
    let c = hypo::estimate_constants(&asm, true).unwrap();
    let cert = hypo::certify(&c, Target::K, 200, 200, None);
    let z = hypo::k_subspace(asm.basis.dim());
    let e = hypo::entropy_check(asm.a.as_ref(), cert.epsilon, cert.kappa, asm.gen.k.as_ref(), z.as_ref(), 100, 4, 10.0, 0.05).unwrap();
    assert!(e.bound_ok && e.equivalence_ok);
    assert!(e.max_increase <= e.tolerance);

    let g0: Vec<f64> = (0..asm.basis.dim()).map(|i| ((i * 37 + 5) % 17) as f64 / 17.0 - 0.5).collect();
    let h = hypo::entropy_monitor(asm.a.as_ref(), cert.epsilon, asm.gen.k.as_ref(), z.as_ref(), &g0, 10.0, 0.05).unwrap();
    assert!(h.equivalence_ok);
    assert!(h.h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}
