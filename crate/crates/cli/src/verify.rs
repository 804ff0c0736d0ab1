//! Acceptance battery at two scales: `fast` for smoke runs and `full` at the
//! declared desk scale with runtime budgets.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use fbdrift_core::drift::norms::default_morrey_grid;
use fbdrift_core::drift::{
    estimate_form_bound, hardy_delta, morrey_norm, weak_ld_norm, TestFunctionFamily,
};
use fbdrift_core::mollifier::{build_approx_sequence, MollifySchedule};
use fbdrift_core::pde::{
    estimate_cascade_bounds, manufactured_study, product_estimate_check, run_cascade,
    CascadeConfig, GridSettings,
};
use fbdrift_core::sde::{
    chi3_cdf, convergence_study, criticality_sweep, flow_norm_statistics, krylov_functional,
    malliavin_derivative, regularity_statistics, simulate_ensemble, variational_flow,
    ConvergenceConfig, CoupledEnsembles, CriticalityConfig, EnsembleSettings, RegularityConfig,
    StartSpec, TestFn,
};
use fbdrift_core::{DriftSpec, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::record::{canonical_json, digest, write_records, Metric, ResultRecord};
use crate::runner::{with_pool, DEFAULT_OUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Fast,
    Full,
}

impl Suite {
    pub fn parse(s: &str) -> CliResult<Suite> {
        match s {
            "fast" => Ok(Suite::Fast),
            "full" => Ok(Suite::Full),
            other => Err(CliError::Usage(format!(
                "unknown suite '{other}', expected fast or full"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Fast => "fast",
            Suite::Full => "full",
        }
    }

    fn pick<T>(self, fast: T, full: T) -> T {
        match self {
            Suite::Fast => fast,
            Suite::Full => full,
        }
    }
}

pub const CRITERIA: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub measured: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CriterionReport {
    /// One line: `[PASS] 4 title | failed checks | key measurements`.
    pub fn line(&self) -> String {
        let failed: Vec<&str> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        let mut s = format!(
            "[{}] {:>2} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title
        );
        if !failed.is_empty() {
            s.push_str(&format!(" | failed: {}", failed.join("; ")));
        }
        if let Some(e) = &self.error {
            s.push_str(&format!(" | error: {e}"));
        }
        let vals: Vec<String> = self
            .measured
            .iter()
            .take(8)
            .map(|(k, v)| format!("{k}={v:.4e}"))
            .collect();
        if !vals.is_empty() {
            s.push_str(&format!(" | {}", vals.join(" ")));
        }
        s
    }
}

/// Checks and measurements accumulated by one criterion.
#[derive(Default)]
struct Probe {
    checks: Vec<Check>,
    measured: BTreeMap<String, f64>,
}

impl Probe {
    fn check(&mut self, name: &str, passed: bool) {
        self.checks.push(Check {
            name: name.into(),
            passed,
        });
    }

    fn set(&mut self, key: &str, v: f64) {
        self.measured.insert(key.into(), v);
    }
}

const TITLES: [&str; 11] = [
    "Hardy form-bound on the quasi-optimizer family",
    "scaling laws: homogeneity, Morrey invariance, weak-norm domination",
    "mollifier truncation error, tolerance and form-bound preservation",
    "manufactured solution order and energy residual",
    "energy cascade constants, ratios and product estimate",
    "driftless SDE variance and occupation oracle",
    "flow and Malliavin derivative bounds",
    "regularity moduli under one constant",
    "coupled convergence across mollification levels",
    "criticality sweep of collapse fractions",
    "determinism across worker counts",
];

/// Runtime budget in seconds at the full scale.
const BUDGETS: [f64; 11] = [
    30.0, 60.0, 120.0, 180.0, 900.0, 60.0, 300.0, 600.0, 600.0, 600.0, 600.0,
];

fn seed_or(seed: Option<u64>, default: u64) -> u64 {
    seed.unwrap_or(default)
}

fn c1(_suite: Suite, _seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let fam = TestFunctionFamily::hardy_quasi_optimizers(3, 1.0)?;
    for (c, lo, hi, name) in [(0.25, 0.20, 0.2503, "c=0.25"), (0.5, 0.80, 1.0012, "c=0.5")] {
        let delta = hardy_delta(c, 3)?;
        let rep = estimate_form_bound(&DriftSpec::hardy(c, 3, 1.0), &fam, &[0.0])?;
        p.set(&format!("delta[{name}]"), delta);
        p.set(&format!("delta_hat[{name}]"), rep.delta_hat);
        p.check(
            &format!("delta_hat[{name}] in [{lo}, {hi}]"),
            rep.delta_hat >= lo && rep.delta_hat <= hi,
        );
    }
    Ok(())
}

fn c2(_suite: Suite, _seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let fam = TestFunctionFamily::reference(3, 1.0)?;
    let fields = [
        ("hardy", DriftSpec::hardy(0.5, 3, 1.0)),
        (
            "gaussian",
            DriftSpec::gaussian(vec![1.0, -0.5, 0.2], 0.3, 1.0),
        ),
        (
            "ball",
            DriftSpec::indicator_ball(0.5, vec![1.0, 0.0, 0.0], 1.0),
        ),
    ];
    let levels: Vec<f64> = (0..20).map(|k| 0.05 * 1.5f64.powi(k)).collect();
    for (name, b) in &fields {
        let base = estimate_form_bound(b, &fam, &[0.0])?.delta_hat;
        for lambda in [3.0, 0.5] {
            let scaled =
                estimate_form_bound(&DriftSpec::scaled(lambda, b.clone()), &fam, &[0.0])?.delta_hat;
            p.check(
                &format!("homogeneity[{name}, {lambda}]"),
                scaled == lambda * lambda * base,
            );
        }
        let (centers, radii) = default_morrey_grid(b);
        let m = morrey_norm(b, 0.5, &centers, &radii, 0.0)?.value;
        let mut worst: f64 = 0.0;
        for lambda in [2.0, 0.5] {
            let cs: Vec<Vec<f64>> = centers
                .iter()
                .map(|c| c.iter().map(|v| v / lambda).collect())
                .collect();
            let rs: Vec<f64> = radii.iter().map(|r| r / lambda).collect();
            let ml = morrey_norm(&DriftSpec::dilated(b.clone(), lambda), 0.5, &cs, &rs, 0.0)?.value;
            worst = worst.max((ml - m).abs() / m);
        }
        p.set(&format!("morrey[{name}]"), m);
        p.set(&format!("morrey_rel_dev[{name}]"), worst);
        p.check(&format!("morrey invariance[{name}]"), worst <= 1e-6);
        let w = weak_ld_norm(b, &levels, 0.0)?;
        let ld = w.ld_norm.unwrap_or(f64::INFINITY);
        p.set(&format!("weak_ld[{name}]"), w.value);
        if ld.is_finite() {
            p.set(&format!("ld[{name}]"), ld);
        }
        p.check(
            &format!("weak <= L^d at every level[{name}]"),
            w.per_level.iter().all(|(_, v)| *v <= ld),
        );
    }
    Ok(())
}

fn c3(_suite: Suite, _seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let c = 1.0;
    let h = DriftSpec::hardy(c, 3, 1.0);
    let sched = MollifySchedule::from_levels(&[10.0, 100.0, 1000.0], 0.05, 0.2)?;
    let rep = build_approx_sequence(
        &h,
        &sched,
        1.0,
        1.0,
        &TestFunctionFamily::reference(3, 1.0)?,
    )?;
    for l in &rep.levels {
        let want = 4.0 * std::f64::consts::PI * c * c * c / l.m;
        p.set(&format!("truncation_l2_sq[m={}]", l.m), l.truncation_l2_sq);
        if l.m <= 100.0 {
            p.check(
                &format!("truncation error within 2% at m={}", l.m),
                (l.truncation_l2_sq - want).abs() <= 0.02 * want,
            );
        }
        p.set(&format!("quotient_ratio[m={}]", l.m), l.max_quotient_ratio);
        p.check(
            &format!("delta_hat(b_m) <= 1.01 delta_hat(b) at m={}", l.m),
            l.form_bound_ok,
        );
    }
    let last = rep.levels.last().map_or(f64::NAN, |l| l.l2_distance);
    p.set("final_l2_distance", last);
    p.set("tolerance", rep.tolerance);
    p.check("final level below tolerance", rep.final_below_tolerance);
    Ok(())
}

fn c4(suite: Suite, _seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let cells = suite.pick([16, 32], [32, 64]);
    let rep = manufactured_study(&cells, 2.0, 0.4, 0.0, 0.5)?;
    let (a, b) = (&rep.rows[0], &rep.rows[1]);
    let c = a.max_error / (a.spacing * a.spacing + a.dt);
    p.set("order", rep.orders[0]);
    p.set("residual_ratio", rep.residual_ratios[0]);
    p.set("error_coarse", a.max_error);
    p.set("error_fine", b.max_error);
    p.set("error_constant", c);
    p.check("spatial order >= 1.8", rep.orders[0] >= 1.8);
    p.check("energy residual drops >= 3x", rep.residual_ratios[0] >= 3.0);
    p.check(
        "fine error <= C (h^2 + dt)",
        b.max_error <= c * (b.spacing * b.spacing + b.dt) * (1.0 + 1e-9),
    );
    Ok(())
}

fn cascade_config(drift: DriftSpec, amp: f64, cells: usize) -> CascadeConfig {
    CascadeConfig {
        drift,
        sources: vec![DriftSpec::gaussian(vec![amp, 0.0, 0.0], 0.17, 1.0); 4],
        alphas: (0..4).map(|k| k % 3 + 1).collect(),
        t0: 0.0,
        t1: 0.1,
        epsilon: None,
        beta: None,
        grid: GridSettings::new(3, 2.6, cells),
        delta_hat: None,
        nu_hat: None,
        smallness: 0.25,
        ratio_floor: 1e-30,
    }
}

fn c5(_suite: Suite, _seed: Option<u64>, p: &mut Probe) -> Result<()> {
    // the length dependence is only resolved once the mesh is finer than the source width
    let cells = 32;
    let base = DriftSpec::mollified(DriftSpec::hardy(0.5, 3, 1.0), None, 0.25, 1.0);
    let (d1, n1) = estimate_cascade_bounds(&cascade_config(base.clone(), 1.0, cells))?;
    let amp = (0.01 / n1).sqrt();
    let at = |target: f64| {
        cascade_config(
            DriftSpec::scaled((target / d1).sqrt(), base.clone()),
            amp,
            cells,
        )
    };
    let small = at(0.01);
    let pe = product_estimate_check(&small, &[0.1, 0.2, 0.4])?;
    let run = pe
        .runs
        .iter()
        .find(|r| r.n == 4 && r.length == 0.1)
        .expect("base run");
    let c = &run.constants;
    let bound = c.c2 / c.c1 * 1.25;
    p.set("delta_hat", c.delta_hat);
    p.set("nu_hat", c.nu_hat);
    p.set("C1", c.c1);
    p.set("C2", c.c2);
    p.check(
        "delta_hat <= 0.01 and nu_hat <= 0.01",
        c.delta_hat <= 0.01 * (1.0 + 1e-12) && c.nu_hat <= 0.01 * (1.0 + 1e-12),
    );
    p.check("C1 > 0", c.c1 > 0.0);
    let worst = run
        .ratios
        .iter()
        .filter_map(|r| r.value)
        .fold(0.0, f64::max);
    p.set("max_ratio", worst);
    p.check("E_k/E_{k+1} <= 1.25 C2/C1", worst <= bound);
    let large = run_cascade(&at(0.04))?;
    let (k1, k4) = (
        run.k_hat.unwrap_or(f64::NAN),
        large.k_hat.unwrap_or(f64::NAN),
    );
    p.set("K_hat[0.01]", k1);
    p.set("K_hat[0.04]", k4);
    p.check("K_hat(0.01) <= K_hat(0.04)", k1 <= k4);
    let slope = pe.length_fit.as_ref().map_or(f64::NAN, |f| f.slope);
    p.set("length_slope", slope);
    p.check(
        "<U^2(T1)> slope in [0.8, 1.2]",
        (0.8..=1.2).contains(&slope),
    );
    Ok(())
}

fn c6(suite: Suite, seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let paths = suite.pick(2000, 10_000);
    let dt = 0.005;
    let set = EnsembleSettings::new(dt, paths, seed_or(seed, 6)).with_stride(40);
    let ens = simulate_ensemble(
        &DriftSpec::zero(3, 1.0),
        &StartSpec::point(vec![0.0; 3]),
        0.0,
        1.0,
        &set,
    )?;
    let mut worst: f64 = 0.0;
    for j in 1..ens.records() {
        let t = ens.record_time(j);
        for (v, se) in ens.displacement_variance(0, j) {
            worst = worst.max((v - t).abs() / se);
        }
    }
    p.set("times", (ens.records() - 1) as f64);
    p.set("max_variance_deviation_se", worst);
    p.check(
        "variance within 3 SE of t at every time and coordinate",
        worst <= 3.0,
    );
    let rep = krylov_functional(&ens, &TestFn::indicator_ball(1.0), 3.0)?;
    let steps = (1.0 / dt).round() as usize;
    let oracle: f64 = (0..steps).map(|k| if k == 0 { 1.0 } else { chi3_cdf(1.0 / (k as f64 * dt).sqrt()) } * dt).sum();
    p.set("krylov", rep.estimate);
    p.set("krylov_se", rep.std_error);
    p.set("krylov_oracle", oracle);
    p.check(
        "occupation within 3 SE of the radial oracle",
        (rep.estimate - oracle).abs() <= 3.0 * rep.std_error,
    );
    Ok(())
}

fn c7(suite: Suite, seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let (paths, per_axis) = suite.pick((400, 3), (2000, 5));
    let b = DriftSpec::gaussian(vec![1.0, -0.5, 0.5], 0.5, 1.5);
    let start = StartSpec::Lattice {
        center: vec![0.0; 3],
        half_extent: 1.5,
        points_per_axis: per_axis,
    };
    let ens = simulate_ensemble(
        &b,
        &start,
        0.0,
        0.5,
        &EnsembleSettings::new(0.01, paths, seed_or(seed, 7)).with_stride(5),
    )?;
    let mut flows = variational_flow(&ens)?;
    flows.malliavin = malliavin_derivative(&ens, &[0.0, 0.1, 0.2, 0.3])?;
    for r in [1, 2] {
        let rep = flow_norm_statistics(&flows, r)?;
        p.set(&format!("K1[r={r}]"), rep.flow.k);
        p.set(&format!("norm_first[r={r}]"), rep.flow.norm[0]);
        p.set(&format!("norm_last[r={r}]"), *rep.flow.norm.last().unwrap());
        p.check(&format!("flow norm tends to 0[r={r}]"), rep.tends_to_zero);
        p.check(
            &format!("flow norm dominated by K1 t^(1/2r)[r={r}]"),
            rep.flow.dominated,
        );
        if let Some(c) = &rep.malliavin_lag {
            p.set(
                &format!("malliavin_lag_dominated[r={r}]"),
                c.dominated as u8 as f64,
            );
        }
        if let Some(c) = &rep.malliavin_gap {
            p.set(
                &format!("malliavin_gap_dominated[r={r}]"),
                c.dominated as u8 as f64,
            );
        }
    }
    let zero = &flows.malliavin[0];
    let mut identical = true;
    for x in 0..flows.starts {
        for q in 0..flows.paths {
            for j in 0..flows.records() {
                let (a, m) = (flows.jacobian(x, q, j), zero.matrix(&flows, x, q, j));
                identical &= a.iter().zip(m).all(|(u, v)| u.to_bits() == v.to_bits());
            }
        }
    }
    p.check(
        "Malliavin s=0 bitwise equals the variational flow",
        identical,
    );
    // linear drift: Euler Jacobian (1 - dt)^k against exp(-t)
    let dt = 0.01;
    let lin = DriftSpec::linear_diagonal(-1.0, 3, 20.0);
    let le = simulate_ensemble(
        &lin,
        &StartSpec::point(vec![0.1, 0.0, 0.0]),
        0.0,
        0.5,
        &EnsembleSettings::new(dt, 50, seed_or(seed, 7)).with_stride(5),
    )?;
    let lf = variational_flow(&le)?;
    let mut dev: f64 = 0.0;
    for q in 0..lf.paths {
        for j in 0..lf.records() {
            let e = (-lf.record_times[j]).exp();
            let m = lf.jacobian(0, q, j);
            for i in 0..3 {
                for k in 0..3 {
                    let want = if i == k { e } else { 0.0 };
                    dev = dev.max((m[i * 3 + k] - want).abs());
                }
            }
        }
    }
    p.set("linear_jacobian_dev", dev);
    p.check("linear Jacobian within dt of exp(-t) I", dev <= dt);
    Ok(())
}

fn c8(suite: Suite, seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let m = 16.0;
    let cfg = RegularityConfig {
        drift: DriftSpec::mollified(
            DriftSpec::hardy(0.1, 3, 1.0),
            Some(m),
            1.0 / 256.0,
            1.0 - 1.0 / m,
        ),
        x0: vec![0.1, 0.0, 0.0],
        s: 0.0,
        t_end: 0.1,
        x_gaps: vec![0.0125, 0.025, 0.05, 0.1],
        s_gaps: vec![0.0125, 0.025, 0.05],
        t_gaps: vec![0.0125, 0.025, 0.05, 0.1],
        settings: EnsembleSettings::new(2e-5, suite.pick(500, 2000), seed_or(seed, 3)),
        r: None,
    };
    let ens = CoupledEnsembles::build(&cfg)?;
    let rep = regularity_statistics(&ens, cfg.moment())?;
    p.set("delta", hardy_delta(0.1, 3)?);
    p.set("r", rep.r as f64);
    p.set("C", rep.c_fit);
    for (name, f) in [
        ("slope_x", &rep.slope_x),
        ("slope_s", &rep.slope_s),
        ("slope_t", &rep.slope_t),
    ] {
        if let Some(f) = f {
            p.set(name, f.slope);
        }
    }
    p.set("rows", rep.rows.len() as f64);
    p.check("r = d + 2", rep.r == 5);
    p.check("increments shared by all ensembles", rep.coupled);
    p.check("all moduli dominated by one constant", rep.dominated);
    Ok(())
}

fn c9(suite: Suite, seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let cfg = ConvergenceConfig {
        drift: DriftSpec::hardy(0.1, 3, 1.0),
        schedule: MollifySchedule::from_levels(&[4.0, 8.0, 16.0, 32.0], 0.05, f64::INFINITY)?,
        x0: vec![0.1, 0.0, 0.0],
        t_end: 0.05,
        settings: EnsembleSettings::new(2.5e-6, suite.pick(250, 1000), seed_or(seed, 11)),
        kappa: 0.01,
        theta: None,
    };
    let rep = convergence_study(&cfg)?;
    for q in &rep.pairs {
        p.set(&format!("median_gap[{}-{}]", q.m_lo, q.m_hi), q.median_gap);
        p.set(&format!("i1[{}-{}]", q.m_lo, q.m_hi), q.i1_surrogate);
    }
    p.set("C1", rep.c1_fit);
    p.check("increments shared by all levels", rep.coupled);
    p.check(
        "median sup-gap non-increasing beyond the first pair",
        rep.gaps_nonincreasing,
    );
    p.check(
        "I1 dominated by C1 times the weighted norm",
        rep.i1_dominated,
    );
    Ok(())
}

fn c10(suite: Suite, seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let cfg = CriticalityConfig {
        deltas: vec![0.25, 1.0, 4.0, 16.0],
        x0: vec![0.01, 0.0, 0.0],
        t_end: 0.01,
        dt: 1e-6,
        paths: suite.pick(2000, 10_000),
        seed: seed_or(seed, 42),
        collapse_radius: 0.005,
        level: 4000.0,
        eps: 1e-3,
        cutoff_radius: 1.0,
    };
    let rep = criticality_sweep(&cfg)?;
    p.set("baseline", rep.baseline.collapse_fraction);
    for r in &rep.rows {
        p.set(&format!("fraction[{}]", r.delta), r.collapse_fraction);
    }
    p.set("separation_se", rep.separation_se);
    p.check("collapse fraction non-decreasing in delta", rep.monotone);
    p.check(
        "fraction(16) - fraction(0.25) >= 5 SE",
        rep.separation_se >= 5.0,
    );
    Ok(())
}

/// Reports of the stochastic criteria 6 and 8 (fast scale) under one and
/// two worker threads must serialize to the same bytes.
fn c11(_suite: Suite, seed: Option<u64>, p: &mut Probe) -> Result<()> {
    let probe = |workers: usize| -> Result<String> {
        let reports = with_pool(Some(workers), || {
            [6u8, 8].map(|id| criterion_untimed(id, Suite::Fast, seed))
        })
        .map_err(|e| fbdrift_core::LabError::Io(e.to_string()))?;
        Ok(serde_json::to_string(&reports)?)
    };
    let (a, b) = (probe(1)?, probe(2)?);
    p.set("report_bytes", a.len() as f64);
    p.check("identical reports under 1 and 2 workers", a == b);
    Ok(())
}

fn criterion_untimed(id: u8, suite: Suite, seed: Option<u64>) -> CriterionReport {
    let mut p = Probe::default();
    let f = match id {
        1 => c1,
        2 => c2,
        3 => c3,
        4 => c4,
        5 => c5,
        6 => c6,
        7 => c7,
        8 => c8,
        9 => c9,
        10 => c10,
        11 => c11,
        _ => panic!("unknown criterion {id}"),
    };
    let error = f(suite, seed, &mut p).err().map(|e| e.to_string());
    let passed = error.is_none() && !p.checks.is_empty() && p.checks.iter().all(|c| c.passed);
    CriterionReport {
        id,
        title: TITLES[id as usize - 1].into(),
        passed,
        checks: p.checks,
        measured: p.measured,
        error,
    }
}

/// Runs one criterion; the full suite also enforces the runtime budget.
pub fn criterion(id: u8, suite: Suite, seed: Option<u64>) -> (CriterionReport, f64) {
    let clock = Instant::now();
    let mut rep = criterion_untimed(id, suite, seed);
    let secs = clock.elapsed().as_secs_f64();
    if suite == Suite::Full {
        let budget = BUDGETS[id as usize - 1];
        let ok = secs < budget;
        rep.checks.push(Check {
            name: format!("runtime < {budget} s"),
            passed: ok,
        });
        rep.passed &= ok;
    }
    (rep, secs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub passed: bool,
    pub criteria: Vec<CriterionReport>,
}

#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub report: VerifyReport,
    pub records: Vec<ResultRecord>,
    pub dir: PathBuf,
}

/// Runs the battery and writes `report.json` and `records.jsonl` under
/// `<out>/verify-<suite>/`. Runtimes live only in the records.
pub fn verify(
    suite: &str,
    seed: Option<u64>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    mut progress: impl FnMut(&CriterionReport) + Send,
) -> CliResult<VerifyOutput> {
    let suite = Suite::parse(suite)?;
    let id = format!("verify-{}", suite.name());
    let dg = digest(&json!({ "suite": suite.name(), "seed": seed }));
    let mut criteria = vec![];
    let mut records = vec![];
    with_pool(workers, || {
        for &c in &CRITERIA {
            let (rep, secs) = criterion(c, suite, seed);
            progress(&rep);
            for (k, v) in &rep.measured {
                records.push(Metric::new(&format!("c{c}.{k}"), *v).stamp(&id, &dg, secs));
            }
            records.push(Metric::flag(&format!("c{c}.passed"), rep.passed).stamp(&id, &dg, secs));
            criteria.push(rep);
        }
    })?;
    let report = VerifyReport {
        suite,
        seed,
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    };
    let dir = out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)).join(&id);
    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("report.json"),
        canonical_json(&serde_json::to_value(&report)?),
    )?;
    write_records(&dir.join("records.jsonl"), &records)?;
    Ok(VerifyOutput {
        report,
        records,
        dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_a_usage_error() {
        assert!(matches!(Suite::parse("medium"), Err(CliError::Usage(_))));
        assert_eq!(Suite::parse("full").unwrap(), Suite::Full);
    }

    #[test]
    fn report_line_names_failed_checks() {
        let rep = CriterionReport {
            id: 5,
            title: "t".into(),
            passed: false,
            checks: vec![
                Check {
                    name: "a".into(),
                    passed: true,
                },
                Check {
                    name: "b".into(),
                    passed: false,
                },
            ],
            measured: BTreeMap::from([("x".to_string(), 1.5)]),
            error: None,
        };
        let line = rep.line();
        assert!(line.starts_with("[FAIL]  5 t | failed: b |"), "{line}");
        assert!(line.contains("x=1.5000e0"));
    }

    #[test]
    fn cheap_criteria_pass_at_fast_scale() {
        for id in [1, 3] {
            let (rep, _) = criterion(id, Suite::Fast, None);
            assert!(rep.passed, "{}", rep.line());
        }
    }
}
