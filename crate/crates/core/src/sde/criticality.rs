use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{admit, grid_index, step_check};
use super::rng::{fill_increments, path_stream};
use crate::drift::{hardy_coefficient, Drift, DriftSpec};
use crate::error::{LabError, Result};
use crate::MAX_DIM;

/// Sweep of mollified Hardy attractors `b = c_m E_eps(1_m b_c)` with
/// `c = ((d-2)/2) sqrt(delta)`, started near the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityConfig {
    pub deltas: Vec<f64>,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub collapse_radius: f64,
    /// Truncation level `m`.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Mollifier width.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff_radius: f64,
}

fn default_level() -> f64 {
    4000.0
}

fn default_eps() -> f64 {
    1e-3
}

fn default_cutoff() -> f64 {
    1.0
}

impl CriticalityConfig {
    pub fn drift(&self, delta: f64) -> DriftSpec {
        let d = self.x0.len();
        if delta == 0.0 {
            return DriftSpec::zero(d, self.cutoff_radius);
        }
        let c = hardy_coefficient(delta, d);
        DriftSpec::mollified(
            DriftSpec::hardy(c, d, self.cutoff_radius),
            Some(self.level),
            self.eps,
            1.0 - 1.0 / self.level,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityRow {
    pub delta: f64,
    pub coefficient: f64,
    /// Fraction of paths with `min_k |X_k| <= collapse_radius`.
    pub collapse_fraction: f64,
    pub std_error: f64,
    /// Fraction of paths with `|X_T| <= collapse_radius`.
    pub end_inside_fraction: f64,
    pub end_std_error: f64,
    pub step_check_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    /// Driftless small-ball statistic.
    pub baseline: CriticalityRow,
    pub rows: Vec<CriticalityRow>,
    /// Collapse fraction non-decreasing along the sweep (sorted by delta).
    pub monotone: bool,
    /// `(fraction(max delta) - fraction(min delta)) / combined SE`.
    pub separation_se: f64,
}

fn fraction_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Streams `paths` Euler-Maruyama paths (same draws as stored increments of
/// the same seed) and returns `(hit, end_inside)` counts.
fn stream_collapse(field: &Drift, cfg: &CriticalityConfig, steps: usize) -> (usize, usize) {
    let d = cfg.x0.len();
    let rad2 = cfg.collapse_radius * cfg.collapse_radius;
    let sqrt_dt = cfg.dt.sqrt();
    let flags: Vec<(bool, bool)> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_stream(cfg.seed, p as u64);
            let mut x = [0.0; MAX_DIM];
            let mut b = [0.0; MAX_DIM];
            let mut dw = [0.0; MAX_DIM];
            x[..d].copy_from_slice(&cfg.x0);
            let norm2 = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
            let mut hit = norm2(&x[..d]) <= rad2;
            for k in 0..steps {
                field.eval_into(k as f64 * cfg.dt, &x[..d], &mut b[..d]);
                fill_increments(&mut rng, sqrt_dt, &mut dw[..d]);
                for i in 0..d {
                    x[i] += b[i] * cfg.dt + dw[i];
                }
                hit |= norm2(&x[..d]) <= rad2;
            }
            (hit, norm2(&x[..d]) <= rad2)
        })
        .collect();
    let hits = flags.iter().filter(|f| f.0).count();
    let ends = flags.iter().filter(|f| f.1).count();
    (hits, ends)
}

fn row(cfg: &CriticalityConfig, delta: f64, steps: usize) -> Result<CriticalityRow> {
    let spec = cfg.drift(delta);
    let field = admit(&spec)?;
    let check = step_check(&field, cfg.dt, 0.0, cfg.t_end);
    let (hits, ends) = stream_collapse(&field, cfg, steps);
    let n = cfg.paths;
    let (f, e) = (hits as f64 / n as f64, ends as f64 / n as f64);
    Ok(CriticalityRow {
        delta,
        coefficient: hardy_coefficient(delta, cfg.x0.len()),
        collapse_fraction: f,
        std_error: fraction_se(f, n),
        end_inside_fraction: e,
        end_std_error: fraction_se(e, n),
        step_check_passed: check.passed,
    })
}

/// Collapse statistics near the origin across form-bounds `delta`.
pub fn criticality_sweep(cfg: &CriticalityConfig) -> Result<CriticalityReport> {
    let d = cfg.x0.len();
    if !(3..=MAX_DIM).contains(&d) {
        return Err(LabError::InvalidArgument(format!(
            "dimension must be in 3..={MAX_DIM}"
        )));
    }
    if cfg.paths == 0 || cfg.deltas.is_empty() {
        return Err(LabError::InvalidArgument(
            "need paths and at least one delta".into(),
        ));
    }
    if cfg.deltas.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || !(cfg.collapse_radius >= 0.0) {
        return Err(LabError::InvalidArgument(
            "deltas and collapse radius must be nonnegative".into(),
        ));
    }
    let steps = grid_index(cfg.t_end, cfg.dt)?;
    let baseline = row(cfg, 0.0, steps)?;
    let mut deltas = cfg.deltas.clone();
    deltas.sort_by(f64::total_cmp);
    let rows = deltas
        .iter()
        .map(|&v| row(cfg, v, steps))
        .collect::<Result<Vec<_>>>()?;
    let monotone = rows
        .windows(2)
        .all(|w| w[1].collapse_fraction >= w[0].collapse_fraction);
    let (lo, hi) = (&rows[0], &rows[rows.len() - 1]);
    let se = (lo.std_error.powi(2) + hi.std_error.powi(2)).sqrt();
    let diff = hi.collapse_fraction - lo.collapse_fraction;
    let separation_se = if se > 0.0 {
        diff / se
    } else if diff > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(CriticalityReport {
        baseline,
        rows,
        monotone,
        separation_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate_ensemble, EnsembleSettings, StartSpec};

    fn small(collapse_radius: f64) -> CriticalityConfig {
        CriticalityConfig {
            deltas: vec![0.25, 16.0],
            x0: vec![0.01, 0.0, 0.0],
            t_end: 0.002,
            dt: 1e-5,
            paths: 400,
            seed: 5,
            collapse_radius,
            level: 4000.0,
            eps: 1e-3,
            cutoff_radius: 1.0,
        }
    }

    #[test]
    fn zero_radius_never_collapses() {
        let rep = criticality_sweep(&small(0.0)).unwrap();
        assert!(rep.rows.iter().all(|r| r.collapse_fraction == 0.0));
        assert_eq!(rep.baseline.collapse_fraction, 0.0);
    }

    #[test]
    fn streamed_baseline_matches_stored_ensemble() {
        let cfg = small(0.005);
        let rep = criticality_sweep(&cfg).unwrap();
        let ens = simulate_ensemble(
            &DriftSpec::zero(3, 1.0),
            &StartSpec::point(cfg.x0.clone()),
            0.0,
            cfg.t_end,
            &EnsembleSettings::new(cfg.dt, cfg.paths, cfg.seed),
        )
        .unwrap();
        let hits = (0..cfg.paths)
            .filter(|&p| {
                (0..ens.records()).any(|j| {
                    ens.position(0, p, j).iter().map(|v| v * v).sum::<f64>() <= 0.005f64.powi(2)
                })
            })
            .count();
        assert_eq!(
            rep.baseline.collapse_fraction,
            hits as f64 / cfg.paths as f64
        );
        assert!(rep.rows[1].collapse_fraction >= rep.rows[0].collapse_fraction);
    }
}
