use fbdrift_core::drift::{estimate_form_bound, TestFunctionFamily};
use fbdrift_core::mollifier::{build_approx_sequence, MollifySchedule};
use fbdrift_core::pde::{manufactured_study, run_cascade, CascadeConfig, GridSettings};
use fbdrift_core::{DriftSpec, LabError};

fn cascade(drift: DriftSpec, cells: usize) -> CascadeConfig {
    CascadeConfig {
        drift,
        sources: vec![DriftSpec::gaussian(vec![0.01, 0.0, 0.0], 0.2, 1.0); 3],
        alphas: vec![1, 2, 3],
        t0: 0.0,
        t1: 0.1,
        epsilon: None,
        beta: None,
        grid: GridSettings::new(3, 2.0, cells),
        delta_hat: None,
        nu_hat: None,
        smallness: 0.25,
        ratio_floor: 1e-30,
    }
}

#[test]
fn drift_documents_round_trip() {
    let b = DriftSpec::mollified(DriftSpec::hardy(0.3, 3, 1.0), Some(50.0), 0.05, 0.98);
    let back = DriftSpec::from_document(&b.to_document().unwrap()).unwrap();
    assert_eq!(back.id(), b.id());
}

#[test]
fn mollified_hardy_sequence_preserves_the_form_bound() {
    let h = DriftSpec::hardy(0.5, 3, 1.0);
    let fam = TestFunctionFamily::reference(3, 1.0).unwrap();
    let sched = MollifySchedule::from_levels(&[10.0, 100.0], 0.05, 1.0).unwrap();
    let rep = build_approx_sequence(&h, &sched, 1.0, 1.0, &fam).unwrap();
    let base = estimate_form_bound(&h, &fam, &[0.0]).unwrap().delta_hat;
    assert_eq!(rep.levels.len(), 2);
    for l in &rep.levels {
        assert!(l.form_bound_ok && l.bounded_ok, "m={}", l.m);
        assert!(l.delta_hat <= 1.01 * base);
    }
    assert!(rep.levels[1].l2_distance < rep.levels[0].l2_distance);
}

#[test]
fn heat_solver_converges_at_second_order() {
    let rep = manufactured_study(&[16, 32], 2.0, 0.4, 0.0, 0.5).unwrap();
    assert!(rep.orders[0] >= 1.8, "{:?}", rep.orders);
}

#[test]
fn small_drift_cascade_has_dominated_ratios() {
    let res = run_cascade(&cascade(
        DriftSpec::gaussian(vec![0.05, 0.0, 0.0], 0.3, 1.0),
        12,
    ))
    .unwrap();
    assert_eq!(res.n, 3);
    assert!(res.energies.iter().all(|e| *e >= 0.0));
    assert!(res.ratios_ok);
}

#[test]
fn small_beta_makes_the_constants_infeasible() {
    let mut cfg = cascade(DriftSpec::zero(3, 1.0), 12);
    cfg.beta = Some(0.3);
    let err = run_cascade(&cfg).unwrap_err();
    assert!(matches!(err, LabError::InfeasibleConstants(_)), "{err}");
}

#[test]
fn large_drift_breaks_the_smallness_threshold() {
    let err = run_cascade(&cascade(DriftSpec::hardy(5.0, 3, 1.0), 12)).unwrap_err();
    assert!(matches!(err, LabError::Configuration(_)), "{err}");
}
