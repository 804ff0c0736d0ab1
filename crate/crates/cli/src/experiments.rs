use std::path::Path;

use fbdrift_core::drift::{estimate_form_bound, TestFunctionFamily};
use fbdrift_core::mollifier::{build_approx_sequence, MollifySchedule};
use fbdrift_core::pde::{product_estimate_check, run_cascade, CascadeResult};
use fbdrift_core::sde::{
    convergence_study, criticality_sweep, flow_norm_statistics, krylov_functional,
    krylov_g_functional, malliavin_derivative, regularity_statistics, simulate_ensemble,
    variational_flow, ConvergenceConfig, CoupledEnsembles, CriticalityConfig, DecayCurve,
    KrylovReport, RegularityConfig,
};
use serde_json::{json, Value};

use crate::config::*;
use crate::error::CliResult;
use crate::record::Metric;

/// Columnar sweep table written as `tables/<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| v.to_string()).collect());
    }

    pub fn push_text(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

/// Everything an experiment produces before persistence.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub metrics: Vec<Metric>,
    pub tables: Vec<Table>,
    /// Full module report.
    pub report: Value,
}

pub fn family(name: FamilyName, d: usize, radius: f64) -> fbdrift_core::Result<TestFunctionFamily> {
    match name {
        FamilyName::Reference => TestFunctionFamily::reference(d, radius),
        FamilyName::HardyQuasiOptimizers => TestFunctionFamily::hardy_quasi_optimizers(d, radius),
    }
}

/// Runs one configured experiment; `artifacts` receives raw exports.
pub fn execute(cfg: &ExperimentConfig, artifacts: &Path) -> CliResult<Outcome> {
    let seed = cfg.seed_or_zero();
    Ok(match &cfg.params {
        Params::Formbound(p) => formbound(p)?,
        Params::Mollify(p) => mollify(p)?,
        Params::PdeCascade(p) => cascade(p)?,
        Params::Simulate(p) => simulate(p, seed, artifacts)?,
        Params::Krylov(p) => krylov(p, seed)?,
        Params::Flow(p) => flow(p, seed)?,
        Params::Regularity(p) => regularity(p, seed)?,
        Params::Converge(p) => converge(p, seed)?,
        Params::Criticality(p) => criticality(p, seed)?,
    })
}

fn formbound(p: &FormboundParams) -> CliResult<Outcome> {
    let fam = family(
        p.family,
        p.drift.dimension,
        p.family_radius.unwrap_or_else(|| p.drift.support_radius()),
    )?;
    let rep = estimate_form_bound(&p.drift, &fam, &p.times)?;
    let mut table = Table::new("quotients", &["id", "t", "quotient"]);
    for q in &rep.quotients {
        table.push_text(vec![q.id.clone(), q.t.to_string(), q.value.to_string()]);
    }
    Ok(Outcome {
        metrics: vec![Metric::new("delta_hat", rep.delta_hat)],
        tables: vec![table],
        report: serde_json::to_value(&rep)?,
    })
}

fn mollify(p: &MollifyParams) -> CliResult<Outcome> {
    let sched = MollifySchedule::from_levels(&p.levels, p.eps0, p.tolerance)?;
    let r = p.drift.support_radius();
    let fam = family(p.family, p.drift.dimension, r)?;
    let rep = build_approx_sequence(&p.drift, &sched, p.half_width.unwrap_or(r), p.horizon, &fam)?;
    let mut metrics = vec![Metric::new("base_delta_hat", rep.base_delta_hat)];
    let mut table = Table::new(
        "levels",
        &[
            "m",
            "eps",
            "c_m",
            "l2_distance",
            "truncation_l2_sq",
            "delta_hat",
            "max_quotient_ratio",
            "sup_norm",
        ],
    );
    for l in &rep.levels {
        for (name, v) in [
            ("l2_distance", l.l2_distance),
            ("truncation_l2_sq", l.truncation_l2_sq),
            ("delta_hat", l.delta_hat),
            ("max_quotient_ratio", l.max_quotient_ratio),
            ("sup_norm", l.sup_norm),
        ] {
            metrics.push(Metric::new(name, v).at("m", l.m));
        }
        table.push(&[
            l.m,
            l.eps,
            l.c_m,
            l.l2_distance,
            l.truncation_l2_sq,
            l.delta_hat,
            l.max_quotient_ratio,
            l.sup_norm,
        ]);
    }
    metrics.push(Metric::flag(
        "final_below_tolerance",
        rep.final_below_tolerance,
    ));
    metrics.push(Metric::flag(
        "form_bound_preserved",
        rep.levels.iter().all(|l| l.form_bound_ok),
    ));
    metrics.push(Metric::flag(
        "bounded",
        rep.levels.iter().all(|l| l.bounded_ok),
    ));
    Ok(Outcome {
        metrics,
        tables: vec![table],
        report: serde_json::to_value(&rep)?,
    })
}

fn cascade_metrics(r: &CascadeResult, metrics: &mut Vec<Metric>) {
    let n = r.n as f64;
    let at = |m: Metric| m.at("n", n).at("length", r.length);
    metrics.push(at(Metric::new("terminal_mass", r.terminal_mass)));
    metrics.push(at(Metric::new("energy_U", r.energy_u)));
    for (k, e) in r.energies.iter().enumerate() {
        metrics.push(at(Metric::new("energy", *e).at("level", (k + 1) as f64)));
    }
    for q in &r.ratios {
        metrics
            .push(at(Metric::new("energy_ratio", q.value.unwrap_or(f64::NAN))
                .at("level", q.level as f64)));
    }
    metrics.push(at(Metric::new("k_hat", r.k_hat.unwrap_or(f64::NAN))));
    metrics.push(at(Metric::flag("ratios_ok", r.ratios_ok)));
}

fn cascade_table(runs: &[&CascadeResult]) -> Table {
    let mut t = Table::new("cascade", &["n", "length", "level", "energy"]);
    for r in runs {
        for (k, e) in r.energies.iter().enumerate() {
            t.push(&[r.n as f64, r.length, (k + 1) as f64, *e]);
        }
        t.push(&[r.n as f64, r.length, 0.0, r.energy_u]);
    }
    t
}

fn cascade(p: &CascadeParams) -> CliResult<Outcome> {
    let mut metrics = vec![];
    if p.lengths.is_empty() {
        let r = run_cascade(&p.cascade)?;
        let c = &r.constants;
        for (name, v) in [
            ("delta_hat", c.delta_hat),
            ("nu_hat", c.nu_hat),
            ("c1", c.c1),
            ("c2", c.c2),
        ] {
            metrics.push(Metric::new(name, v));
        }
        cascade_metrics(&r, &mut metrics);
        let tables = vec![cascade_table(&[&r])];
        return Ok(Outcome {
            metrics,
            tables,
            report: serde_json::to_value(&r)?,
        });
    }
    let rep = product_estimate_check(&p.cascade, &p.lengths)?;
    if let Some(c) = rep.runs.first().map(|r| &r.constants) {
        for (name, v) in [
            ("delta_hat", c.delta_hat),
            ("nu_hat", c.nu_hat),
            ("c1", c.c1),
            ("c2", c.c2),
        ] {
            metrics.push(Metric::new(name, v));
        }
    }
    for r in &rep.runs {
        cascade_metrics(r, &mut metrics);
    }
    if let Some(f) = &rep.length_fit {
        metrics.push(Metric::new("length_slope", f.slope));
    }
    if let Some(f) = &rep.order_fit {
        metrics.push(Metric::new("order_rate", f.slope.exp()));
    }
    metrics.push(Metric::flag("order_ratios_ok", rep.order_ratios_ok));
    metrics.push(Metric::new("c5_hat", rep.c5_hat));
    let mut sweep = Table::new("product", &["length", "terminal_mass"]);
    for (l, m) in rep.lengths.iter().zip(&rep.masses_by_length) {
        sweep.push(&[*l, *m]);
    }
    let mut orders = Table::new("orders", &["n", "terminal_mass"]);
    for (n, m) in rep.orders.iter().zip(&rep.masses_by_order) {
        orders.push(&[*n as f64, *m]);
    }
    let runs: Vec<&CascadeResult> = rep.runs.iter().collect();
    Ok(Outcome {
        metrics,
        tables: vec![cascade_table(&runs), sweep, orders],
        report: serde_json::to_value(&rep)?,
    })
}

fn simulate(p: &SimulateParams, seed: u64, artifacts: &Path) -> CliResult<Outcome> {
    let e = &p.ensemble;
    let ens = simulate_ensemble(&e.drift, &e.start, e.s, e.t_end, &e.settings(seed))?;
    if p.export {
        ens.export(artifacts, "ensemble")?;
    }
    let mut metrics = vec![Metric::flag("step_check_passed", ens.step_check.passed)];
    let mut table = Table::new(
        "variance",
        &["start", "t", "coordinate", "variance", "stderr"],
    );
    for x in 0..ens.starts.len() {
        for j in 1..ens.records() {
            let t = ens.record_time(j) - ens.s;
            for (i, (v, se)) in ens.displacement_variance(x, j).into_iter().enumerate() {
                metrics.push(
                    Metric::new("displacement_variance", v)
                        .se(se)
                        .at("start", x as f64)
                        .at("t", t)
                        .at("coordinate", i as f64),
                );
                table.push(&[x as f64, t, i as f64, v, se]);
            }
        }
    }
    Ok(Outcome {
        metrics,
        tables: vec![table],
        report: json!({ "sidecar": ens.sidecar(), "step_check": ens.step_check }),
    })
}

fn krylov_metrics(rep: &KrylovReport, metrics: &mut Vec<Metric>) {
    metrics.push(Metric::new("krylov_estimate", rep.estimate).se(rep.std_error));
    metrics.push(Metric::new("reference_norm", rep.reference_norm));
    metrics.push(Metric::new("ratio", rep.ratio));
}

fn krylov(p: &KrylovParams, seed: u64) -> CliResult<Outcome> {
    let e = &p.ensemble;
    let ens = simulate_ensemble(&e.drift, &e.start, e.s, e.t_end, &e.settings(seed))?;
    let mut metrics = vec![];
    let plain = krylov_functional(&ens, &p.h, p.mu)?;
    krylov_metrics(&plain, &mut metrics);
    let mut report = json!({ "plain": plain });
    if let (Some(g), Some(q), Some(dh)) = (&p.g, p.q, p.delta_hat) {
        let comp = krylov_g_functional(&ens, g, &p.h, q, dh)?;
        let mut extra = vec![];
        krylov_metrics(&comp, &mut extra);
        metrics.extend(extra.into_iter().map(|m| Metric {
            name: format!("composite_{}", m.name),
            ..m
        }));
        report["composite"] = serde_json::to_value(&comp)?;
    }
    let mut table = Table::new("per_start", &["start", "estimate"]);
    for (i, v) in plain.per_start.iter().enumerate() {
        table.push(&[i as f64, *v]);
    }
    Ok(Outcome {
        metrics,
        tables: vec![table],
        report,
    })
}

fn curve_metrics(
    prefix: &str,
    r: u32,
    c: &DecayCurve,
    metrics: &mut Vec<Metric>,
    table: &mut Table,
) {
    for ((x, n), env) in c.x.iter().zip(&c.norm).zip(&c.envelope) {
        metrics.push(
            Metric::new(&format!("{prefix}_norm"), *n)
                .at("r", r as f64)
                .at(&c.variable, *x),
        );
        table.push(&[r as f64, *x, *n, *env]);
    }
    metrics.push(Metric::new(&format!("{prefix}_envelope_k"), c.k).at("r", r as f64));
    metrics.push(Metric::new(&format!("{prefix}_envelope_exponent"), c.exponent).at("r", r as f64));
    metrics.push(Metric::flag(&format!("{prefix}_dominated"), c.dominated).at("r", r as f64));
}

fn flow(p: &FlowParams, seed: u64) -> CliResult<Outcome> {
    let e = &p.ensemble;
    let ens = simulate_ensemble(&e.drift, &e.start, e.s, e.t_end, &e.settings(seed))?;
    let mut flows = variational_flow(&ens)?;
    if !p.malliavin_s.is_empty() {
        flows.malliavin = malliavin_derivative(&ens, &p.malliavin_s)?;
    }
    let mut metrics = vec![];
    let mut tables = vec![];
    let mut reports = vec![];
    for &r in &p.r {
        let rep = flow_norm_statistics(&flows, r)?;
        let mut t = Table::new(&format!("flow_r{r}"), &["r", "t", "norm", "envelope"]);
        curve_metrics("flow", r, &rep.flow, &mut metrics, &mut t);
        metrics.push(Metric::flag("flow_tends_to_zero", rep.tends_to_zero).at("r", r as f64));
        tables.push(t);
        for (name, c) in [
            ("malliavin_lag", &rep.malliavin_lag),
            ("malliavin_gap", &rep.malliavin_gap),
        ] {
            if let Some(c) = c {
                let mut t = Table::new(
                    &format!("{name}_r{r}"),
                    &["r", &c.variable, "norm", "envelope"],
                );
                curve_metrics(name, r, c, &mut metrics, &mut t);
                tables.push(t);
            }
        }
        reports.push(rep);
    }
    Ok(Outcome {
        metrics,
        tables,
        report: serde_json::to_value(&reports)?,
    })
}

fn regularity(p: &RegularityParams, seed: u64) -> CliResult<Outcome> {
    let cfg = RegularityConfig {
        drift: p.drift.clone(),
        x0: p.x0.clone(),
        s: p.s,
        t_end: p.t_end,
        x_gaps: p.x_gaps.clone(),
        s_gaps: p.s_gaps.clone(),
        t_gaps: p.t_gaps.clone(),
        settings: fbdrift_core::sde::EnsembleSettings {
            relaxed_step_check: p.relaxed_step_check,
            ..fbdrift_core::sde::EnsembleSettings::new(p.dt, p.paths, seed)
        },
        r: p.r,
    };
    let ens = CoupledEnsembles::build(&cfg)?;
    let rep = regularity_statistics(&ens, cfg.moment())?;
    let mut metrics = vec![];
    let mut table = Table::new(
        "moduli",
        &["family", "gap", "moment", "stderr", "rhs", "envelope"],
    );
    for w in &rep.rows {
        metrics.push(
            Metric::new(&format!("modulus_{}", w.family), w.moment)
                .se(w.std_error)
                .at("gap", w.gap),
        );
        table.push_text(vec![
            w.family.clone(),
            w.gap.to_string(),
            w.moment.to_string(),
            w.std_error.to_string(),
            w.rhs.to_string(),
            (rep.c_fit * w.rhs).to_string(),
        ]);
    }
    metrics.push(Metric::new("c_fit", rep.c_fit));
    metrics.push(Metric::flag("dominated", rep.dominated));
    metrics.push(Metric::flag("coupled", rep.coupled));
    for (name, f) in [
        ("slope_x", &rep.slope_x),
        ("slope_s", &rep.slope_s),
        ("slope_t", &rep.slope_t),
    ] {
        if let Some(f) = f {
            metrics.push(Metric::new(name, f.slope));
        }
    }
    Ok(Outcome {
        metrics,
        tables: vec![table],
        report: serde_json::to_value(&rep)?,
    })
}

fn converge(p: &ConvergeParams, seed: u64) -> CliResult<Outcome> {
    let cfg = ConvergenceConfig {
        drift: p.drift.clone(),
        schedule: MollifySchedule::from_levels(&p.levels, p.eps0, f64::INFINITY)?,
        x0: p.x0.clone(),
        t_end: p.t_end,
        settings: fbdrift_core::sde::EnsembleSettings {
            relaxed_step_check: p.relaxed_step_check,
            ..fbdrift_core::sde::EnsembleSettings::new(p.dt, p.paths, seed)
        },
        kappa: p.kappa.unwrap_or(0.01),
        theta: p.theta,
    };
    let rep = convergence_study(&cfg)?;
    let mut metrics = vec![];
    let mut table = Table::new(
        "pairs",
        &[
            "m_lo",
            "m_hi",
            "median_gap",
            "p95_gap",
            "i1_surrogate",
            "i1_stderr",
            "weighted_norm",
        ],
    );
    for q in &rep.pairs {
        let at = |m: Metric| m.at("m_lo", q.m_lo).at("m_hi", q.m_hi);
        metrics.push(at(Metric::new("median_gap", q.median_gap)));
        metrics.push(at(Metric::new("p95_gap", q.p95_gap)));
        metrics.push(at(
            Metric::new("i1_surrogate", q.i1_surrogate).se(q.i1_std_error)
        ));
        metrics.push(at(Metric::new("weighted_norm", q.weighted_norm)));
        table.push(&[
            q.m_lo,
            q.m_hi,
            q.median_gap,
            q.p95_gap,
            q.i1_surrogate,
            q.i1_std_error,
            q.weighted_norm,
        ]);
    }
    metrics.push(Metric::new("c1_fit", rep.c1_fit));
    metrics.push(Metric::flag("i1_dominated", rep.i1_dominated));
    metrics.push(Metric::flag("gaps_nonincreasing", rep.gaps_nonincreasing));
    metrics.push(Metric::flag("coupled", rep.coupled));
    Ok(Outcome {
        metrics,
        tables: vec![table],
        report: serde_json::to_value(&rep)?,
    })
}

pub fn criticality_config(p: &CriticalityParams, seed: u64) -> CriticalityConfig {
    CriticalityConfig {
        deltas: p.deltas.clone(),
        x0: p.x0.clone(),
        t_end: p.t_end,
        dt: p.dt,
        paths: p.paths,
        seed,
        collapse_radius: p.collapse_radius,
        level: p.level,
        eps: p.eps,
        cutoff_radius: p.cutoff_radius,
    }
}

fn criticality(p: &CriticalityParams, seed: u64) -> CliResult<Outcome> {
    let rep = criticality_sweep(&criticality_config(p, seed))?;
    let mut metrics =
        vec![
            Metric::new("baseline_collapse_fraction", rep.baseline.collapse_fraction)
                .se(rep.baseline.std_error),
        ];
    let mut table = Table::new("criticality", &["delta", "collapse_fraction", "stderr"]);
    for r in &rep.rows {
        metrics.push(
            Metric::new("collapse_fraction", r.collapse_fraction)
                .se(r.std_error)
                .at("delta", r.delta),
        );
        metrics.push(
            Metric::new("end_inside_fraction", r.end_inside_fraction)
                .se(r.end_std_error)
                .at("delta", r.delta),
        );
        table.push(&[r.delta, r.collapse_fraction, r.std_error]);
    }
    metrics.push(Metric::flag("monotone", rep.monotone));
    metrics.push(Metric::new("separation_se", rep.separation_se));
    Ok(Outcome {
        metrics,
        tables: vec![table],
        report: serde_json::to_value(&rep)?,
    })
}
