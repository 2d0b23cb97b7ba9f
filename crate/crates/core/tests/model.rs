use emz::model::{auto_halfwidth, check_conditions, GibbsMeasure, Potential, PotentialKind};

#[test]
fn potential_evaluation() {
    assert_eq!(Potential::harmonic(1.0).eval(2.0).unwrap(), (2.0, 2.0, 1.0));
    assert_eq!(Potential::quartic().eval(0.0).unwrap(), (0.0, 0.0, 0.0));
    assert_eq!(Potential::quartic().eval(2.0).unwrap(), (4.0, 8.0, 12.0));
}

#[test]
fn non_confining_polynomials_are_rejected() {
    assert!(Potential::polynomial(vec![0.0, 0.0, 0.0, 1.0]).is_err());
    assert!(Potential::polynomial(vec![0.0, 0.0, -1.0]).is_err());
    assert!(Potential::new(PotentialKind::Harmonic, vec![1.0], 2).is_err());
}

#[test]
fn harmonic_partition_function() {
    let g = GibbsMeasure::build(&Potential::harmonic(1.0), 1.0, 12.0, 256).unwrap();
    let want = (2.0 * std::f64::consts::PI).sqrt();
    assert!((g.z_q - want).abs() / want < 1e-12, "{}", g.z_q);
    assert!((g.expect(|_| 1.0) - 1.0).abs() < 1e-12);
    assert!((g.expect(|q| q * q) - 1.0).abs() < 1e-12);
}

#[test]
fn quartic_normalization() {
    let pot = Potential::quartic();
    let l = auto_halfwidth(&pot, 1.0, 40.0);
    let g = GibbsMeasure::build(&pot, 1.0, l, 600).unwrap();
    assert!((g.expect(|_| 1.0) - 1.0).abs() < 1e-12);
    assert!(g.expect(|q| q).abs() < 1e-12);
    assert!(g.edge_weight < 1e-16);
}

#[test]
fn conditions_on_reference_potentials() {
    for pot in [Potential::harmonic(1.0), Potential::quartic()] {
        let l = auto_halfwidth(&pot, 1.0, 40.0);
        let g = GibbsMeasure::build(&pot, 1.0, l, 600).unwrap();
        let r = check_conditions(&pot, &g, l);
        assert!(r.all_pass(), "{pot:?}: {r:?}");
        assert!(r.c3_sup_ratio.is_finite());
    }
}

#[test]
fn steep_surrogate_fails_c3_near_its_support() {
    let c: Vec<f64> = (0..=12)
        .map(|k| if k % 2 == 0 { 1.0 / (1..=k / 2).product::<usize>() as f64 } else { 0.0 })
        .collect();
    let pot = Potential::polynomial(c).unwrap();
    let l = auto_halfwidth(&pot, 1.0, 40.0);
    let g = GibbsMeasure::build(&pot, 1.0, l, 600).unwrap();
    let r = check_conditions(&pot, &g, l);
    assert!(r.c1_pass && r.c2_pass);
    assert!(!r.c3_pass);
    assert!(r.c3_edge_slope > 0.0);
}

#[test]
fn sampling() {
    let g = GibbsMeasure::build(&Potential::harmonic(1.0), 1.0, 12.0, 256).unwrap();
    let x = g.sample(100_000, 3);
    let mean = x.iter().map(|s| s.0).sum::<f64>() / x.len() as f64;
    assert!(mean.abs() < 0.02, "{mean}");
    let var_p = x.iter().map(|s| s.1 * s.1).sum::<f64>() / x.len() as f64;
    assert!((var_p - 1.0).abs() < 0.02, "{var_p}");
    assert!(g.sample(0, 3).is_empty());
    assert_eq!(g.sample(50, 9), g.sample(50, 9));
}
