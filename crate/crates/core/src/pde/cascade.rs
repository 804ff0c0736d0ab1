use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{Geometry, GridSettings};
use super::solver::{stable_dt, time_grid, DriftNodes, LedgerBuilder, Stepper, TimeGrid};
use crate::drift::formbound::time_grid as sample_times;
use crate::drift::{estimate_form_bound, Drift, DriftSpec, Symmetry, TestFunctionFamily};
use crate::error::{LabError, Result};
use crate::stats::{linear_fit, loglog_fit, LinearFit};
use crate::MAX_DIM;

/// Allowed excess of a measured energy ratio over `C2/C1`.
pub const RATIO_TOLERANCE: f64 = 0.25;

/// Energy-cascade problem: drift `b`, scalar sources `f_1..f_n` (first
/// component of each spec), derivative indices `alpha_k` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub drift: DriftSpec,
    pub sources: Vec<DriftSpec>,
    pub alphas: Vec<usize>,
    pub t0: f64,
    pub t1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub grid: GridSettings,
    /// Form-bound of `b`; estimated on the reference family when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_hat: Option<f64>,
    /// Common form-bound of the `f_i`; estimated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu_hat: Option<f64>,
    /// Largest admissible `delta_hat` and `nu_hat`.
    #[serde(default = "default_smallness")]
    pub smallness: f64,
    /// Ratios are reported only when the denominator exceeds this.
    #[serde(default = "default_ratio_floor")]
    pub ratio_floor: f64,
}

fn default_smallness() -> f64 {
    0.25
}

fn default_ratio_floor() -> f64 {
    1e-30
}

impl CascadeConfig {
    pub fn n(&self) -> usize {
        self.sources.len()
    }

    pub fn length(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.drift.dimension;
        if self.sources.is_empty() {
            return Err(LabError::Configuration(
                "cascade needs at least one source".into(),
            ));
        }
        if self.alphas.len() != self.sources.len() {
            return Err(LabError::Configuration(format!(
                "{} sources but {} derivative indices",
                self.sources.len(),
                self.alphas.len()
            )));
        }
        if let Some(a) = self.alphas.iter().find(|&&a| a == 0 || a > d) {
            return Err(LabError::Configuration(format!(
                "derivative index {a} outside 1..={d}"
            )));
        }
        if self.sources.iter().any(|f| f.dimension != d) || self.grid.dimension != d {
            return Err(LabError::Configuration(
                "drift, sources and grid must share the dimension".into(),
            ));
        }
        if !(self.t0 >= 0.0 && self.t0 <= self.t1 && self.t1.is_finite()) {
            return Err(LabError::Configuration(format!(
                "need 0 <= T0 <= T1, got [{}, {}]",
                self.t0, self.t1
            )));
        }
        for (name, v) in [("epsilon", self.epsilon), ("beta", self.beta)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(LabError::Configuration(format!("{name} must be positive")));
                }
            }
        }
        self.drift.validate()?;
        for f in &self.sources {
            f.validate()?;
        }
        self.grid.validate()
    }
}

/// Constants of the energy estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeConstants {
    pub delta_hat: f64,
    pub nu_hat: f64,
    pub epsilon: f64,
    pub beta: f64,
    /// `1 - 2 sqrt(delta) - 2 eps nu - 1/(2 beta)`.
    pub c1: f64,
    /// `2 beta nu + 1/(2 eps)`.
    pub c2: f64,
}

impl CascadeConstants {
    pub fn new(
        delta_hat: f64,
        nu_hat: f64,
        epsilon: Option<f64>,
        beta: Option<f64>,
    ) -> Result<Self> {
        let default = if nu_hat > 0.0 {
            (0.5 / nu_hat.sqrt()).max(2.0)
        } else {
            2.0
        };
        let epsilon = epsilon.unwrap_or(default);
        let beta = beta.unwrap_or(default);
        let c1 = 1.0 - 2.0 * delta_hat.sqrt() - 2.0 * epsilon * nu_hat - 0.5 / beta;
        let c2 = 2.0 * beta * nu_hat + 0.5 / epsilon;
        if c1 <= 0.0 {
            return Err(LabError::InfeasibleConstants(format!(
                "C1 = {c1:.4} <= 0 for delta = {delta_hat:.4}, nu = {nu_hat:.4}, eps = {epsilon}, beta = {beta}"
            )));
        }
        Ok(Self {
            delta_hat,
            nu_hat,
            epsilon,
            beta,
            c1,
            c2,
        })
    }

    /// `K = C2 / C1`.
    pub fn k(&self) -> f64 {
        self.c2 / self.c1
    }
}

/// Ratio `E_level / E_{level+1}`; level 1 stands for `U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRatio {
    pub level: usize,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    pub n: usize,
    pub length: f64,
    pub constants: CascadeConstants,
    pub time_grid: TimeGrid,
    /// `E_k = int_{T0}^{T1} <|grad u_k|^2>` for `k = 1..n`.
    pub energies: Vec<f64>,
    /// `int_0^{T1} <|grad U|^2>`.
    pub energy_u: f64,
    /// `<U^2(T1)>`.
    pub terminal_mass: f64,
    pub ratios: Vec<EnergyRatio>,
    /// Largest measured ratio.
    pub k_hat: Option<f64>,
    pub ratios_ok: bool,
    /// `<U^2(T1)> + C1 E_U` and `C2 E_2` (absent for `n = 1`).
    pub chain_lhs: f64,
    pub chain_rhs: Option<f64>,
    pub chain_ok: bool,
    /// `1/2 E_n / (T1 - T0)`.
    pub c5_hat: f64,
    /// `<U^2(T1)> <= C2 K^{n-2} E_n`.
    pub final_bound_ok: bool,
    /// Largest `|U(t) - u_1(T1 - t)|` relative to `max |u_1|`.
    pub equivalence_gap: f64,
    /// Largest energy-identity residual relative to the level's Dirichlet integral.
    pub max_relative_residual: f64,
    pub boundary_leakage: f64,
}

/// Form-bound estimates used by the cascade (reference family, three times).
pub fn estimate_cascade_bounds(cfg: &CascadeConfig) -> Result<(f64, f64)> {
    let d = cfg.drift.dimension;
    let times = sample_times(cfg.t0, cfg.t1, 3);
    let bound = |spec: &DriftSpec| -> Result<f64> {
        if spec.symmetry() == Symmetry::Zero {
            return Ok(0.0);
        }
        let t: &[f64] = if spec.is_time_constant() {
            &times[..1]
        } else {
            &times
        };
        let fam = TestFunctionFamily::reference(d, spec.support_radius())?;
        Ok(estimate_form_bound(spec, &fam, t)?.delta_hat)
    };
    let delta = match cfg.delta_hat {
        Some(v) => v,
        None => bound(&cfg.drift)?,
    };
    let nu = match cfg.nu_hat {
        Some(v) => v,
        None => {
            let mut nu: f64 = 0.0;
            for f in &cfg.sources {
                nu = nu.max(bound(&DriftSpec::projected(f.clone(), 0))?);
            }
            nu
        }
    };
    Ok((delta, nu))
}

/// Nodal `d_alpha f_0` of a source, refreshed per time when time-dependent.
struct SourceDerivative {
    field: Option<Drift>,
    alpha: usize,
    constant: bool,
    values: Vec<f64>,
    filled: bool,
}

impl SourceDerivative {
    fn new(spec: &DriftSpec, alpha: usize, geometry: &Geometry) -> Result<Self> {
        let zero = spec.symmetry() == Symmetry::Zero;
        Ok(Self {
            field: if zero { None } else { Some(Drift::new(spec)?) },
            alpha,
            constant: spec.is_time_constant(),
            values: vec![0.0; geometry.len()],
            filled: zero,
        })
    }

    fn at(&mut self, t: f64, geometry: &Geometry) -> Result<&[f64]> {
        if let (Some(field), false) = (&self.field, self.constant && self.filled) {
            let d = geometry.dimension;
            let slab = geometry.slab();
            let alpha = self.alpha;
            let parts: Vec<Result<()>> = self
                .values
                .par_chunks_mut(slab)
                .enumerate()
                .map(|(j, chunk)| {
                    let mut x = [0.0; MAX_DIM];
                    let mut jac = [0.0; MAX_DIM * MAX_DIM];
                    for (i, v) in chunk.iter_mut().enumerate() {
                        geometry.point(j * slab + i, &mut x);
                        field.grad_into(t, &x[..d], &mut jac[..d * d])?;
                        *v = jac[alpha];
                    }
                    Ok(())
                })
                .collect();
            parts.into_iter().collect::<Result<Vec<()>>>()?;
            self.filled = true;
        }
        Ok(&self.values)
    }
}

/// Back-substitution cascade `u_n, ..., u_1` with `g_k = (d_{alpha_k} f_k) u_{k+1}`,
/// `u_{n+1} = 1`, and the forward problem for `U`. All levels are marched
/// together in `tau = T1 - t`; level `k` at step `j` only reads `u_{k+1}` at
/// step `j`, so this equals solving the levels one after another.
pub fn run_cascade(cfg: &CascadeConfig) -> Result<CascadeResult> {
    cfg.validate()?;
    let (delta_hat, nu_hat) = estimate_cascade_bounds(cfg)?;
    if delta_hat > cfg.smallness || nu_hat > cfg.smallness {
        return Err(LabError::Configuration(format!(
            "form-bounds delta = {delta_hat:.4}, nu = {nu_hat:.4} exceed the smallness threshold {}",
            cfg.smallness
        )));
    }
    let constants = CascadeConstants::new(delta_hat, nu_hat, cfg.epsilon, cfg.beta)?;
    let geo = cfg.grid.geometry()?;
    let n = cfg.n();
    let (t0, t1) = (cfg.t0, cfg.t1);
    let length = t1 - t0;
    let mut drift = DriftNodes::new(&cfg.drift, &geo)?;
    let (speed, l1) = drift.speeds(0.0, t1, &geo);
    let stable = stable_dt(&geo, speed, l1, cfg.grid.cfl_safety);
    let tg = time_grid(&cfg.grid, length, stable)?;
    let (big_b, _) =
        super::solver::build_reversed_problem(&cfg.drift, &super::solver::ZeroSource, t0, t1)?;
    let mut drift_u = DriftNodes::new(&big_b, &geo)?;
    let mut derivs = cfg
        .sources
        .iter()
        .zip(&cfg.alphas)
        .map(|(f, &a)| SourceDerivative::new(f, a - 1, &geo))
        .collect::<Result<Vec<_>>>()?;

    let stepper = Stepper::new(geo.clone());
    let len = geo.len();
    let mut u: Vec<Vec<f64>> = vec![vec![0.0; len]; n];
    let mut next: Vec<Vec<f64>> = vec![vec![0.0; len]; n];
    let mut big_u = vec![0.0; len];
    let mut big_next = vec![0.0; len];
    let mut g: Vec<Vec<f64>> = vec![vec![0.0; len]; n];
    let mut ledgers = vec![LedgerBuilder::default(); n];
    let mut ledger_u = LedgerBuilder::default();
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 0.0;

    for j in 0..=tg.steps {
        let t = t1 - j as f64 * tg.dt;
        for k in 0..n {
            let df = derivs[k].at(t, &geo)?;
            if k + 1 == n {
                g[k].copy_from_slice(df);
            } else {
                let upper = &u[k + 1];
                g[k].par_iter_mut()
                    .zip(df.par_iter().zip(upper.par_iter()))
                    .for_each(|(o, (a, b))| *o = a * b);
            }
        }
        let step_dt = if j < tg.steps { tg.dt } else { 0.0 };
        let bn = drift.at(t, &geo);
        for k in 0..n {
            let (terms, finite) = stepper.advance(&u[k], bn, Some(&g[k]), step_dt, &mut next[k]);
            if !finite {
                return Err(LabError::Numerical(format!(
                    "level {} non-finite at step {}",
                    k + 1,
                    j + 1
                )));
            }
            ledgers[k].push(terms, tg.dt);
        }
        let bu = drift_u.at(j as f64 * tg.dt, &geo);
        let (terms, finite) = stepper.advance(&big_u, bu, Some(&g[0]), step_dt, &mut big_next);
        if !finite {
            return Err(LabError::Numerical(format!(
                "U non-finite at step {}",
                j + 1
            )));
        }
        ledger_u.push(terms, tg.dt);
        for (a, c) in u[0].iter().zip(&big_u) {
            gap = gap.max((a - c).abs());
            scale = scale.max(a.abs());
        }
        if j < tg.steps {
            std::mem::swap(&mut u, &mut next);
            std::mem::swap(&mut big_u, &mut big_next);
        }
    }

    // Continuation of U on ]T1 - T0, T1]: no source, drift b(t + T0 - T1).
    let tg_v = time_grid(&cfg.grid, t0, stable)?;
    for i in 1..=tg_v.steps {
        let s = length + (i - 1) as f64 * tg_v.dt;
        let bu = drift_u.at(s, &geo);
        let (terms, finite) = stepper.advance(&big_u, bu, None, tg_v.dt, &mut big_next);
        if !finite {
            return Err(LabError::Numerical(format!(
                "U non-finite in the continuation at step {i}"
            )));
        }
        if i > 1 {
            ledger_u.push(terms, tg_v.dt);
        } else {
            ledger_u.relimit(terms);
        }
        std::mem::swap(&mut big_u, &mut big_next);
        if i == tg_v.steps {
            let bu = drift_u.at(t1, &geo);
            ledger_u.push(stepper.terms(&big_u, bu, None), tg_v.dt);
        }
    }

    let leak = boundary_leakage(&geo, &big_u);
    let levels: Vec<_> = ledgers.into_iter().map(|l| l.finish()).collect();
    let lu = ledger_u.finish();
    let energies: Vec<f64> = levels.iter().map(|l| l.dirichlet).collect();
    let max_rel = levels
        .iter()
        .chain(std::iter::once(&lu))
        .filter(|l| l.dirichlet > 0.0)
        .map(|l| l.residual / l.dirichlet)
        .fold(0.0, f64::max);
    let k_bound = constants.k();
    let ratio = |a: f64, b: f64| {
        if b > cfg.ratio_floor {
            Some(a / b)
        } else {
            None
        }
    };
    let mut ratios = vec![];
    if n >= 2 {
        ratios.push(EnergyRatio {
            level: 1,
            value: ratio(lu.dirichlet, energies[1]),
        });
        for k in 1..n - 1 {
            ratios.push(EnergyRatio {
                level: k + 1,
                value: ratio(energies[k], energies[k + 1]),
            });
        }
    }
    let k_hat = ratios.iter().filter_map(|r| r.value).reduce(f64::max);
    let ratios_ok = ratios
        .iter()
        .filter_map(|r| r.value)
        .all(|v| v <= k_bound * (1.0 + RATIO_TOLERANCE));
    let terminal_mass = lu.mass_end;
    let chain_lhs = terminal_mass + constants.c1 * lu.dirichlet;
    let chain_rhs = (n >= 2).then(|| constants.c2 * energies[1]);
    let chain_ok = chain_rhs.is_none_or(|r| chain_lhs <= r * (1.0 + RATIO_TOLERANCE));
    let e_n = energies[n - 1];
    let final_bound = if n >= 2 {
        constants.c2 * k_bound.powi(n as i32 - 2) * e_n
    } else {
        f64::INFINITY
    };
    Ok(CascadeResult {
        n,
        length,
        constants,
        time_grid: tg,
        energies,
        energy_u: lu.dirichlet,
        terminal_mass,
        ratios,
        k_hat,
        ratios_ok,
        chain_lhs,
        chain_rhs,
        chain_ok,
        c5_hat: if length > 0.0 {
            0.5 * e_n / length
        } else {
            0.0
        },
        final_bound_ok: terminal_mass <= final_bound * (1.0 + RATIO_TOLERANCE),
        equivalence_gap: if scale > 0.0 { gap / scale } else { 0.0 },
        max_relative_residual: max_rel,
        boundary_leakage: leak,
    })
}

fn boundary_leakage(geo: &Geometry, u: &[f64]) -> f64 {
    let f = super::grid::GridField {
        geometry: geo.clone(),
        time: 0.0,
        values: u.to_vec(),
    };
    let m = f.max_abs();
    if m > 0.0 {
        f.boundary_layer_max() / m
    } else {
        0.0
    }
}

/// Fits of the product estimate `<U^2(T1)> <= C0 K^n (T1 - T0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductEstimateReport {
    pub lengths: Vec<f64>,
    pub masses_by_length: Vec<f64>,
    /// Log-log fit of `<U^2(T1)>` against `T1 - T0` at the configured `n`.
    pub length_fit: Option<LinearFit>,
    /// `n = 2..=N` at the configured length.
    pub orders: Vec<usize>,
    pub masses_by_order: Vec<f64>,
    /// Fit of `log <U^2(T1)>` against `n`; `exp(slope)` is the decay rate.
    pub order_fit: Option<LinearFit>,
    pub order_ratios: Vec<f64>,
    /// Largest energy ratio at the configured `n` and length.
    pub k_hat: Option<f64>,
    pub order_ratios_ok: bool,
    /// `1/2 E_n / length` per length, its maximum, and the log-log slope of `E_n`.
    pub c5_by_length: Vec<f64>,
    pub c5_hat: f64,
    pub c5_fit: Option<LinearFit>,
    pub degenerate: bool,
    pub runs: Vec<CascadeResult>,
}

pub fn product_estimate_check(
    cfg: &CascadeConfig,
    lengths: &[f64],
) -> Result<ProductEstimateReport> {
    cfg.validate()?;
    if lengths.iter().any(|&l| !(l > 0.0)) {
        return Err(LabError::InvalidArgument(
            "interval lengths must be positive".into(),
        ));
    }
    let (delta, nu) = estimate_cascade_bounds(cfg)?;
    let base = CascadeConfig {
        delta_hat: Some(delta),
        nu_hat: Some(nu),
        ..cfg.clone()
    };
    let by_length: Vec<CascadeResult> = lengths
        .par_iter()
        .map(|&l| {
            run_cascade(&CascadeConfig {
                t1: base.t0 + l,
                ..base.clone()
            })
        })
        .collect::<Result<_>>()?;
    let orders: Vec<usize> = (2..=cfg.n()).collect();
    let by_order: Vec<CascadeResult> = orders
        .par_iter()
        .map(|&m| {
            run_cascade(&CascadeConfig {
                sources: base.sources[..m].to_vec(),
                alphas: base.alphas[..m].to_vec(),
                ..base.clone()
            })
        })
        .collect::<Result<_>>()?;
    let masses_by_length: Vec<f64> = by_length.iter().map(|r| r.terminal_mass).collect();
    let masses_by_order: Vec<f64> = by_order.iter().map(|r| r.terminal_mass).collect();
    let degenerate = masses_by_length
        .iter()
        .chain(&masses_by_order)
        .all(|&m| m == 0.0);
    let length_fit = if degenerate {
        None
    } else {
        loglog_fit(lengths, &masses_by_length)
    };
    let order_fit = if degenerate || masses_by_order.iter().any(|&m| m <= 0.0) {
        None
    } else {
        let x: Vec<f64> = orders.iter().map(|&m| m as f64).collect();
        let y: Vec<f64> = masses_by_order.iter().map(|m| m.ln()).collect();
        linear_fit(&x, &y)
    };
    let order_ratios: Vec<f64> = masses_by_order
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect();
    let k_hat = by_order.last().and_then(|r| r.k_hat);
    let order_ratios_ok = match k_hat {
        Some(k) => order_ratios.iter().all(|&r| r <= k * 1.2),
        None => degenerate,
    };
    let c5_by_length: Vec<f64> = by_length.iter().map(|r| r.c5_hat).collect();
    let e_n: Vec<f64> = by_length
        .iter()
        .map(|r| *r.energies.last().unwrap())
        .collect();
    let mut runs = by_length;
    runs.extend(by_order);
    Ok(ProductEstimateReport {
        lengths: lengths.to_vec(),
        masses_by_length,
        length_fit,
        orders,
        masses_by_order,
        order_fit,
        order_ratios,
        k_hat,
        order_ratios_ok,
        c5_hat: c5_by_length.iter().copied().fold(0.0, f64::max),
        c5_by_length,
        c5_fit: if degenerate {
            None
        } else {
            loglog_fit(lengths, &e_n)
        },
        degenerate,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussRule;

    fn config(
        drift: DriftSpec,
        sources: Vec<DriftSpec>,
        cells: usize,
        half_width: f64,
        t1: f64,
    ) -> CascadeConfig {
        let n = sources.len();
        CascadeConfig {
            drift,
            sources,
            alphas: (0..n).map(|k| k % 3 + 1).collect(),
            t0: 0.0,
            t1,
            epsilon: None,
            beta: None,
            grid: GridSettings::new(3, half_width, cells),
            delta_hat: None,
            nu_hat: None,
            smallness: default_smallness(),
            ratio_floor: default_ratio_floor(),
        }
    }

    #[test]
    fn constants_follow_the_estimates() {
        let c = CascadeConstants::new(0.01, 0.01, None, None).unwrap();
        assert_eq!(c.epsilon, 5.0);
        assert!((c.c1 - 0.6).abs() < 1e-12 && (c.c2 - 0.2).abs() < 1e-12);
        assert!((c.k() - 1.0 / 3.0).abs() < 1e-12);
        let e = CascadeConstants::new(0.25, 0.01, None, None).unwrap_err();
        assert_eq!(e.code(), "infeasible-constants");
    }

    #[test]
    fn zero_sources_give_zero_energies() {
        let cfg = config(
            DriftSpec::gaussian(vec![0.2, 0.0, 0.0], 0.3, 1.0),
            vec![DriftSpec::zero(3, 1.0); 3],
            12,
            2.0,
            0.1,
        );
        let r = run_cascade(&cfg).unwrap();
        assert!(r.energies.iter().all(|&e| e == 0.0));
        assert_eq!(r.terminal_mass, 0.0);
        assert!(r.k_hat.is_none());
        let p = product_estimate_check(&cfg, &[0.05, 0.1]).unwrap();
        assert!(p.degenerate && p.length_fit.is_none());
    }

    /// `||u_1(0)||^2` for `b = 0`, `f = a exp(-|x|^2/(2 s^2))` by the heat kernel.
    fn heat_oracle(a: f64, s: f64, t: f64) -> f64 {
        let d = 3.0;
        let rule = GaussRule::new(48);
        let s2 = s * s;
        rule.integrate(0.0, t, |p| {
            rule.integrate(0.0, t, |q| {
                let (v, w) = (s2 + p, s2 + q);
                let m = v * w / (v + w);
                a * a
                    * s2.powf(d)
                    * (v * w).powf(-d / 2.0 - 1.0)
                    * m
                    * (2.0 * std::f64::consts::PI * m).powf(d / 2.0)
            })
        })
    }

    #[test]
    fn single_level_matches_heat_kernel() {
        let f = DriftSpec::gaussian(vec![0.5, 0.0, 0.0], 0.3, 2.4);
        let exact = heat_oracle(0.5, 0.3, 0.2);
        let errs: Vec<f64> = [24, 48]
            .iter()
            .map(|&cells| {
                let r = run_cascade(&config(
                    DriftSpec::zero(3, 1.0),
                    vec![f.clone()],
                    cells,
                    2.4,
                    0.2,
                ))
                .unwrap();
                (r.terminal_mass - exact).abs() / exact
            })
            .collect();
        assert!(errs[1] < 0.02, "{errs:?}");
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn cascade_chain_holds() {
        let b = DriftSpec::mollified(DriftSpec::hardy(0.05, 3, 1.0), None, 0.25, 1.0);
        let f = DriftSpec::gaussian(vec![1.0, 0.0, 0.0], 0.25, 1.0);
        let mut cfg = config(b, vec![f; 3], 16, 2.4, 0.1);
        cfg.t0 = 0.05;
        cfg.t1 = 0.15;
        let r = run_cascade(&cfg).unwrap();
        assert!(r.constants.c1 > 0.0);
        assert!(r.ratios_ok && r.chain_ok && r.final_bound_ok, "{r:?}");
        assert_eq!(r.ratios.len(), 2);
        assert!(r.energies.iter().all(|&e| e > 0.0));
        assert!(r.equivalence_gap < 1e-12);
        assert!(r.max_relative_residual < 0.1, "{}", r.max_relative_residual);
    }
}
