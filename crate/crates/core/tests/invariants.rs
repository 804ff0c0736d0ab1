use fbdrift_core::drift::norms::default_morrey_grid;
use fbdrift_core::drift::{
    estimate_form_bound, hardy_coefficient, morrey_norm, weak_ld_norm, TestFunctionFamily,
};
use fbdrift_core::sde::{simulate_ensemble, EnsembleSettings, StartSpec};
use fbdrift_core::{eval_drift, hardy_delta, DriftSpec};
use proptest::prelude::*;

fn gaussian() -> impl Strategy<Value = DriftSpec> {
    (prop::collection::vec(-2.0..2.0f64, 3), 0.15..0.6f64)
        .prop_map(|(a, w)| DriftSpec::gaussian(a, w, 1.0))
}

fn field() -> impl Strategy<Value = DriftSpec> {
    prop_oneof![
        gaussian(),
        (0.05..1.0f64).prop_map(|c| DriftSpec::hardy(c, 3, 1.0)),
        (0.1..0.9f64, -1.0..1.0f64).prop_map(|(r, v)| DriftSpec::indicator_ball(
            r,
            vec![v, 1.0, 0.0],
            1.0
        )),
        prop::collection::vec(-1.0..1.0f64, 3).prop_map(|v| DriftSpec::constant(v, 1.0)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn form_bound_is_quadratically_homogeneous(b in gaussian(), lambda in 0.1..5.0f64) {
        let fam = TestFunctionFamily::reference(3, 1.0).unwrap();
        let base = estimate_form_bound(&b, &fam, &[0.0]).unwrap().delta_hat;
        let scaled = estimate_form_bound(&DriftSpec::scaled(lambda, b), &fam, &[0.0]).unwrap().delta_hat;
        prop_assert_eq!(scaled, lambda * lambda * base);
    }

    #[test]
    fn morrey_norm_is_dilation_invariant(b in gaussian(), lambda in 0.3..3.0f64) {
        let (centers, radii) = default_morrey_grid(&b);
        let m = morrey_norm(&b, 0.5, &centers, &radii, 0.0).unwrap().value;
        let cs: Vec<Vec<f64>> = centers.iter().map(|c| c.iter().map(|v| v / lambda).collect()).collect();
        let rs: Vec<f64> = radii.iter().map(|r| r / lambda).collect();
        let ml = morrey_norm(&DriftSpec::dilated(b, lambda), 0.5, &cs, &rs, 0.0).unwrap().value;
        prop_assert!((ml - m).abs() <= 1e-6 * m, "{} vs {}", ml, m);
    }

    #[test]
    fn weak_norm_never_exceeds_ld_norm(b in gaussian()) {
        let levels: Vec<f64> = (0..16).map(|k| 0.05 * 1.5f64.powi(k)).collect();
        let w = weak_ld_norm(&b, &levels, 0.0).unwrap();
        let ld = w.ld_norm.unwrap();
        for (s, v) in &w.per_level {
            prop_assert!(*v <= ld * (1.0 + 1e-9), "level {}: {} > {}", s, v, ld);
        }
    }
}

proptest! {
    #[test]
    fn fields_vanish_outside_the_cutoff(b in field(), dir in prop::collection::vec(-1.0..1.0f64, 3), r in 1.0..4.0f64) {
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(n > 1e-3);
        let x: Vec<f64> = dir.iter().map(|v| v / n * r).collect();
        prop_assert!(eval_drift(&b, 0.0, &x).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hardy_coefficient_inverts_delta(c in 0.01..3.0f64, d in 3usize..=8) {
        let delta = hardy_delta(c, d).unwrap();
        prop_assert!((hardy_coefficient(delta, d) - c).abs() <= 1e-12 * c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn ensembles_are_seed_deterministic(seed in any::<u64>(), stride in prop::sample::select(vec![1usize, 2, 4, 5, 10])) {
        let b = DriftSpec::gaussian(vec![1.0, 0.0, -1.0], 0.5, 1.0);
        let set = EnsembleSettings::new(0.01, 16, seed).with_stride(stride);
        let run = || simulate_ensemble(&b, &StartSpec::point(vec![0.1, 0.0, 0.0]), 0.0, 0.2, &set).unwrap();
        let (a, c) = (run(), run());
        for p in 0..16 {
            for j in 0..a.records() {
                prop_assert_eq!(a.position(0, p, j), c.position(0, p, j));
            }
        }
    }
}
