use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{grid_index, simulate_coupled, EnsembleSettings, PathEnsemble, StartSpec};
use super::rng::Increments;
use crate::drift::DriftSpec;
use crate::error::{LabError, Result};
use crate::stats::{loglog_fit, mean, std_error, LinearFit};

/// Relative standard error above which a moment is flagged under-resolved.
pub const UNDER_RESOLVED: f64 = 0.5;

/// Coupled-ensemble design: spatial gaps along `e_1`, later start times
/// `s + gap`, and time gaps `[T - gap, T]` for the drift increment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityConfig {
    pub drift: DriftSpec,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub s: f64,
    pub t_end: f64,
    pub x_gaps: Vec<f64>,
    pub s_gaps: Vec<f64>,
    pub t_gaps: Vec<f64>,
    pub settings: EnsembleSettings,
    /// Moment exponent; defaults to `d + 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<u32>,
}

impl RegularityConfig {
    pub fn moment(&self) -> u32 {
        self.r.unwrap_or(self.drift.dimension as u32 + 2)
    }
}

/// Ensembles driven by one increment array.
#[derive(Debug, Clone)]
pub struct CoupledEnsembles {
    /// Starts `x0` then `x0 + gap e_1` for each spatial gap.
    pub spatial: PathEnsemble,
    /// Started from `x0` at `s + gap`.
    pub shifted: Vec<(f64, PathEnsemble)>,
    pub time_gaps: Vec<f64>,
}

impl CoupledEnsembles {
    pub fn build(cfg: &RegularityConfig) -> Result<Self> {
        let d = cfg.drift.dimension;
        if cfg.x0.len() != d {
            return Err(LabError::InvalidArgument(
                "x0 has the wrong dimension".into(),
            ));
        }
        let set = &cfg.settings;
        let total = grid_index(cfg.t_end, set.dt)?;
        let inc = Arc::new(Increments::generate(set.seed, set.paths, total, d, set.dt)?);
        let mut points = vec![cfg.x0.clone()];
        for g in &cfg.x_gaps {
            let mut y = cfg.x0.clone();
            y[0] += g;
            points.push(y);
        }
        let steps = total - grid_index(cfg.s, set.dt)?;
        let spatial = simulate_coupled(
            &cfg.drift,
            &StartSpec::Points { points },
            cfg.s,
            cfg.t_end,
            &inc,
            steps,
            set.relaxed_step_check,
        )?;
        let shifted = cfg
            .s_gaps
            .iter()
            .map(|&g| {
                let s2 = cfg.s + g;
                let n = total - grid_index(s2, set.dt)?;
                simulate_coupled(
                    &cfg.drift,
                    &StartSpec::point(cfg.x0.clone()),
                    s2,
                    cfg.t_end,
                    &inc,
                    n,
                    set.relaxed_step_check,
                )
                .map(|e| (g, e))
            })
            .collect::<Result<Vec<_>>>()?;
        for &g in &cfg.t_gaps {
            let n = grid_index(g, set.dt)?;
            if n > steps {
                return Err(LabError::InvalidArgument(format!(
                    "time gap {g} exceeds T - s"
                )));
            }
        }
        Ok(Self {
            spatial,
            shifted,
            time_gaps: cfg.t_gaps.clone(),
        })
    }

    /// Checksums of the increments behind every ensemble.
    pub fn checksums(&self) -> Vec<u64> {
        std::iter::once(&self.spatial)
            .chain(self.shifted.iter().map(|(_, e)| e))
            .map(|e| e.increments.checksum)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    /// `x`, `s` or `t`.
    pub family: String,
    pub gap: f64,
    pub moment: f64,
    pub std_error: f64,
    /// Right-hand side term: `gap^r` for `t`, `gap^(r-d)` for `x` and `s`.
    pub rhs: f64,
    pub under_resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub r: u32,
    pub rows: Vec<ModulusRow>,
    /// Single constant, anchored at the largest gap of each family.
    pub c_fit: f64,
    /// Every `moment - 3 SE <= C rhs`.
    pub dominated: bool,
    pub slope_x: Option<LinearFit>,
    pub slope_s: Option<LinearFit>,
    pub slope_t: Option<LinearFit>,
    pub warnings: Vec<String>,
    pub checksums: Vec<u64>,
    pub coupled: bool,
}

fn moment_row(family: &str, gap: f64, samples: &[f64], rhs: f64) -> ModulusRow {
    let (m, se) = (mean(samples), std_error(samples));
    ModulusRow {
        family: family.into(),
        gap,
        moment: m,
        std_error: se,
        rhs,
        under_resolved: m > 0.0 && se > UNDER_RESOLVED * m,
    }
}

fn distance_pow(a: &[f64], b: &[f64], r: u32) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
        .powi(r as i32)
}

/// r-th moments of the coupled gaps `|X^x_{s,T} - X^y_{s,T}|`,
/// `|X^x_{s,T} - X^x_{s',T}|` and `|int_{T-g}^T b(X_u) du|`, with a single
/// dominating constant for `C(|t2-t1|^r + |x-y|^(r-d) + |s2-s1|^(r-d))`.
pub fn regularity_statistics(ens: &CoupledEnsembles, r: u32) -> Result<RegularityReport> {
    let base = &ens.spatial;
    let d = base.dimension;
    if (r as usize) <= d {
        return Err(LabError::InvalidArgument(format!(
            "r must exceed d = {d}, got {r}"
        )));
    }
    let rd = (r as usize - d) as i32;
    let last = base.records() - 1;
    let mut rows = vec![];
    for i in 1..base.starts.len() {
        let gap = (0..d)
            .map(|k| (base.starts[i][k] - base.starts[0][k]).powi(2))
            .sum::<f64>()
            .sqrt();
        let samples: Vec<f64> = (0..base.paths)
            .map(|p| distance_pow(base.position(i, p, last), base.position(0, p, last), r))
            .collect();
        rows.push(moment_row("x", gap, &samples, gap.powi(rd)));
    }
    for (g, e) in &ens.shifted {
        let el = e.records() - 1;
        let samples: Vec<f64> = (0..base.paths)
            .map(|p| distance_pow(e.position(0, p, el), base.position(0, p, last), r))
            .collect();
        rows.push(moment_row("s", *g, &samples, g.powi(rd)));
    }
    if !ens.time_gaps.is_empty() {
        let lags: Vec<usize> = ens
            .time_gaps
            .iter()
            .map(|g| grid_index(*g, base.dt))
            .collect::<Result<_>>()?;
        let per_path: Vec<Vec<f64>> = (0..base.paths)
            .into_par_iter()
            .map(|p| {
                let mut partial = vec![0.0; (base.steps + 1) * d];
                let mut acc = [0.0; crate::MAX_DIM];
                base.replay(0, p, |k, _, _, b| {
                    partial[k * d..(k + 1) * d].copy_from_slice(&acc[..d]);
                    for i in 0..d {
                        acc[i] += b[i] * base.dt;
                    }
                })?;
                let end = &partial[base.steps * d..];
                Ok(lags
                    .iter()
                    .map(|&n| {
                        let k = base.steps - n;
                        distance_pow(end, &partial[k * d..(k + 1) * d], r)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (j, g) in ens.time_gaps.iter().enumerate() {
            let samples: Vec<f64> = per_path.iter().map(|v| v[j]).collect();
            rows.push(moment_row("t", *g, &samples, g.powi(r as i32)));
        }
    }
    let mut c_fit: f64 = 0.0;
    for fam in ["x", "s", "t"] {
        if let Some(top) = rows
            .iter()
            .filter(|w| w.family == fam)
            .max_by(|a, b| a.gap.total_cmp(&b.gap))
        {
            if top.rhs > 0.0 {
                c_fit = c_fit.max(top.moment / top.rhs);
            }
        }
    }
    let dominated = rows
        .iter()
        .all(|w| w.moment - 3.0 * w.std_error <= c_fit * w.rhs * (1.0 + 1e-12));
    let slope = |fam: &str| {
        let pts: Vec<&ModulusRow> = rows
            .iter()
            .filter(|w| w.family == fam && w.gap > 0.0)
            .collect();
        loglog_fit(
            &pts.iter().map(|w| w.gap).collect::<Vec<_>>(),
            &pts.iter().map(|w| w.moment).collect::<Vec<_>>(),
        )
    };
    let warnings = rows
        .iter()
        .filter(|w| w.under_resolved)
        .map(|w| {
            format!(
                "under-resolved {}-moment at gap {}: relative SE {:.2}",
                w.family,
                w.gap,
                w.std_error / w.moment
            )
        })
        .collect();
    let checksums = ens.checksums();
    Ok(RegularityReport {
        r,
        slope_x: slope("x"),
        slope_s: slope("s"),
        slope_t: slope("t"),
        rows,
        c_fit,
        dominated,
        warnings,
        coupled: checksums.windows(2).all(|w| w[0] == w[1]),
        checksums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(drift: DriftSpec) -> RegularityConfig {
        RegularityConfig {
            drift,
            x0: vec![0.3, 0.0, 0.0],
            s: 0.0,
            t_end: 0.2,
            x_gaps: vec![0.0, 0.05, 0.1],
            s_gaps: vec![0.0, 0.02, 0.04],
            t_gaps: vec![0.0, 0.05, 0.1],
            settings: EnsembleSettings::new(0.002, 400, 4),
            r: None,
        }
    }

    #[test]
    fn driftless_moduli() {
        let cfg = config(DriftSpec::zero(3, 1.0));
        let ens = CoupledEnsembles::build(&cfg).unwrap();
        let rep = regularity_statistics(&ens, cfg.moment()).unwrap();
        assert!(rep.coupled);
        assert_eq!(rep.r, 5);
        for w in &rep.rows {
            if w.gap == 0.0 || w.family == "t" {
                assert_eq!(w.moment, 0.0, "{w:?}");
            }
            if w.family == "x" {
                assert!((w.moment - w.gap.powi(5)).abs() < 1e-12 * w.gap.powi(5).max(1e-300));
            }
        }
    }

    #[test]
    fn smooth_drift_moduli_are_dominated() {
        let cfg = config(DriftSpec::gaussian(vec![-1.0, 0.5, 0.0], 0.4, 2.0));
        let ens = CoupledEnsembles::build(&cfg).unwrap();
        let rep = regularity_statistics(&ens, 5).unwrap();
        assert!(rep.dominated, "{rep:?}");
        assert!(rep.slope_x.unwrap().slope > 4.0);
        assert!(rep.slope_t.unwrap().slope > 4.0);
        assert!(matches!(
            regularity_statistics(&ens, 3),
            Err(LabError::InvalidArgument(_))
        ));
    }
}
