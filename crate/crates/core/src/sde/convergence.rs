use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{grid_index, simulate_coupled, EnsembleSettings, PathEnsemble, StartSpec};
use super::rng::Increments;
use crate::drift::norms::{default_theta, weighted_norm_rho, Lattice};
use crate::drift::DriftSpec;
use crate::error::{LabError, Result};
use crate::mollifier::MollifySchedule;
use crate::stats::{mean, median, quantile, std_error};
use crate::MAX_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub drift: DriftSpec,
    pub schedule: MollifySchedule,
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub settings: EnsembleSettings,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

fn default_kappa() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPair {
    pub m_lo: f64,
    pub m_hi: f64,
    pub median_gap: f64,
    pub p95_gap: f64,
    /// `E int |(b_m - b_m')(t, X^m_t)| dt`.
    pub i1_surrogate: f64,
    pub i1_std_error: f64,
    /// `sup_z ||(b_m - b_m') sqrt(rho_z)||_{L^2([0,T] x R^d)}`.
    pub weighted_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<f64>,
    pub pairs: Vec<LevelPair>,
    /// `I1 / weighted norm` of the first pair.
    pub c1_fit: f64,
    /// Every pair has `I1 - 3 SE <= C1 weighted norm`.
    pub i1_dominated: bool,
    /// Median sup-gap non-increasing from the second pair on.
    pub gaps_nonincreasing: bool,
    pub checksums: Vec<u64>,
    pub coupled: bool,
}

/// Per-path `sup_k |X_k - Y_k|` and `sum_k |(b - b')(t_k, X_k)| dt` for consecutive levels.
fn pair_statistics(lo: &PathEnsemble, hi: &PathEnsemble) -> Result<Vec<(f64, f64)>> {
    let d = lo.dimension;
    (0..lo.paths)
        .into_par_iter()
        .map(|p| {
            let mut path = vec![0.0; (lo.steps + 1) * d];
            let mut i1 = 0.0;
            let mut other = [0.0; MAX_DIM];
            lo.replay(0, p, |k, t, x, b| {
                path[k * d..(k + 1) * d].copy_from_slice(x);
                if k < lo.steps {
                    hi.field().eval_into(t, x, &mut other[..d]);
                    i1 += (0..d)
                        .map(|i| (b[i] - other[i]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                }
            })?;
            let mut gap: f64 = 0.0;
            hi.replay(0, p, |k, _, y, _| {
                let x = &path[k * d..(k + 1) * d];
                gap = gap.max((0..d).map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt());
            })?;
            Ok((gap, i1 * lo.dt))
        })
        .collect()
}

/// Synchronously coupled simulation of `b_m` across the schedule.
pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.schedule.validate()?;
    if cfg.schedule.len() < 2 {
        return Err(LabError::InvalidArgument("need at least two levels".into()));
    }
    let d = cfg.drift.dimension;
    let set = &cfg.settings;
    let steps = grid_index(cfg.t_end, set.dt)?;
    let inc = Arc::new(Increments::generate(set.seed, set.paths, steps, d, set.dt)?);
    let start = StartSpec::point(cfg.x0.clone());
    let specs: Vec<DriftSpec> = (0..cfg.schedule.len())
        .map(|k| cfg.schedule.level_spec(&cfg.drift, k))
        .collect();
    let ensembles = specs
        .iter()
        .map(|b| {
            simulate_coupled(
                b,
                &start,
                0.0,
                cfg.t_end,
                &inc,
                steps,
                set.relaxed_step_check,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let theta = cfg.theta.unwrap_or_else(|| default_theta(d));
    let lattice = Lattice::default_for(cfg.drift.support_radius());
    let mut pairs = vec![];
    for k in 0..specs.len() - 1 {
        let stats = pair_statistics(&ensembles[k], &ensembles[k + 1])?;
        let gaps: Vec<f64> = stats.iter().map(|s| s.0).collect();
        let i1: Vec<f64> = stats.iter().map(|s| s.1).collect();
        let diff = DriftSpec::sum(vec![
            specs[k].clone(),
            DriftSpec::scaled(-1.0, specs[k + 1].clone()),
        ]);
        let wn = weighted_norm_rho(&diff, 0.0, cfg.t_end, cfg.kappa, theta, &lattice)?;
        pairs.push(LevelPair {
            m_lo: cfg.schedule.levels[k],
            m_hi: cfg.schedule.levels[k + 1],
            median_gap: median(&gaps),
            p95_gap: quantile(&gaps, 0.95),
            i1_surrogate: mean(&i1),
            i1_std_error: std_error(&i1),
            weighted_norm: wn.value,
        });
    }
    let first = &pairs[0];
    let c1_fit = if first.weighted_norm > 0.0 {
        first.i1_surrogate / first.weighted_norm
    } else {
        0.0
    };
    let i1_dominated = pairs
        .iter()
        .all(|p| p.i1_surrogate - 3.0 * p.i1_std_error <= c1_fit * p.weighted_norm * (1.0 + 1e-12));
    let gaps_nonincreasing = pairs
        .windows(2)
        .skip(1)
        .all(|w| w[1].median_gap <= w[0].median_gap);
    let checksums: Vec<u64> = ensembles.iter().map(|e| e.increments.checksum).collect();
    Ok(ConvergenceReport {
        levels: cfg.schedule.levels.clone(),
        pairs,
        c1_fit,
        i1_dominated,
        gaps_nonincreasing,
        coupled: checksums.windows(2).all(|w| w[0] == w[1]),
        checksums,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_field_levels_stabilize() {
        // Above the sup of the field only c_m changes between levels.
        let cfg = ConvergenceConfig {
            drift: DriftSpec::gaussian(vec![0.5, 0.0, 0.0], 0.5, 2.0),
            schedule: MollifySchedule::from_levels(&[4.0, 8.0, 16.0], 0.05, f64::INFINITY).unwrap(),
            x0: vec![0.2, 0.0, 0.0],
            t_end: 0.2,
            settings: EnsembleSettings::new(0.002, 200, 3),
            kappa: 0.01,
            theta: None,
        };
        let rep = convergence_study(&cfg).unwrap();
        assert!(rep.coupled);
        for p in &rep.pairs {
            let scale_gap = cfg.t_end * 0.5 * (1.0 / p.m_lo - 1.0 / p.m_hi);
            assert!(p.median_gap <= 1.05 * scale_gap, "{p:?}");
            assert!(p.weighted_norm > 0.0);
        }
        assert!(rep.pairs[1].median_gap < rep.pairs[0].median_gap);
    }
}
