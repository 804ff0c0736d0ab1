use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::Increments;
use crate::drift::{Drift, DriftKind, DriftSpec};
use crate::error::{LabError, Result};
use crate::MAX_DIM;

/// Starting points of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StartSpec {
    Point {
        x: Vec<f64>,
    },
    Points {
        points: Vec<Vec<f64>>,
    },
    /// `points_per_axis^d` nodes of the box `center + [-half_extent, half_extent]^d`,
    /// each weighted by its cell volume.
    Lattice {
        center: Vec<f64>,
        half_extent: f64,
        points_per_axis: usize,
    },
}

impl StartSpec {
    pub fn point(x: Vec<f64>) -> Self {
        StartSpec::Point { x }
    }

    /// Points and quadrature weights.
    pub fn resolve(&self, d: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (points, weights) = match self {
            StartSpec::Point { x } => (vec![x.clone()], vec![1.0]),
            StartSpec::Points { points } => (points.clone(), vec![1.0; points.len()]),
            StartSpec::Lattice {
                center,
                half_extent,
                points_per_axis,
            } => {
                if *points_per_axis < 2 || !(*half_extent > 0.0) {
                    return Err(LabError::InvalidArgument(
                        "lattice needs >= 2 points per axis and a positive extent".into(),
                    ));
                }
                if center.len() != d {
                    return Err(LabError::InvalidArgument(
                        "lattice center has the wrong dimension".into(),
                    ));
                }
                let h = 2.0 * half_extent / (*points_per_axis - 1) as f64;
                let mut pts = vec![];
                crate::quadrature::for_each_index(d, *points_per_axis, |idx| {
                    pts.push(
                        (0..d)
                            .map(|k| center[k] - half_extent + idx[k] as f64 * h)
                            .collect(),
                    );
                });
                let n = pts.len();
                (pts, vec![h.powi(d as i32); n])
            }
        };
        if points.is_empty() {
            return Err(LabError::InvalidArgument("no starting points".into()));
        }
        if let Some(p) = points
            .iter()
            .find(|p| p.len() != d || p.iter().any(|v| !v.is_finite()))
        {
            return Err(LabError::InvalidArgument(format!(
                "bad starting point {p:?} for dimension {d}"
            )));
        }
        Ok((points, weights))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Positions are stored every `record_stride` steps.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Accept steps violating the variation-scale condition (flagged in the report).
    #[serde(default)]
    pub relaxed_step_check: bool,
}

fn default_stride() -> usize {
    1
}

impl EnsembleSettings {
    pub fn new(dt: f64, paths: usize, seed: u64) -> Self {
        Self {
            dt,
            paths,
            seed,
            record_stride: 1,
            relaxed_step_check: false,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn relaxed(mut self) -> Self {
        self.relaxed_step_check = true;
        self
    }
}

/// Step-size condition `dt sup|b| <= 0.1 scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub dt: f64,
    pub sup_drift: f64,
    pub scale: f64,
    pub passed: bool,
}

pub const STEP_FRACTION: f64 = 0.1;

/// Length scale on which `b` varies: mollifier width for mollified fields,
/// Gaussian width, cutoff transition width `R/2` for cut-off atoms.
pub fn variation_scale(spec: &DriftSpec) -> f64 {
    let cut = 0.5 * spec.cutoff_radius;
    match &spec.kind {
        DriftKind::Zero => f64::INFINITY,
        DriftKind::HardyAttractor { c } => {
            if *c == 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        }
        DriftKind::Linear { .. } | DriftKind::Constant { .. } => cut,
        DriftKind::Gaussian { width, .. } => width.min(cut),
        DriftKind::IndicatorBall { .. } | DriftKind::Truncated { .. } => 0.0,
        DriftKind::SampledGrid {
            half_width,
            points_per_axis,
            ..
        } => (2.0 * half_width / (*points_per_axis as f64 - 1.0)).min(cut),
        DriftKind::Mollified { inner, eps, .. } => eps.max(variation_scale(inner)),
        DriftKind::Dilated { lambda, inner } => variation_scale(inner) / lambda.abs(),
        DriftKind::Scaled { inner, .. }
        | DriftKind::Projected { inner, .. }
        | DriftKind::Retimed { inner, .. } => variation_scale(inner),
        DriftKind::Sum { terms } => terms
            .iter()
            .map(variation_scale)
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn step_check(field: &Drift, dt: f64, s: f64, t_end: f64) -> StepCheck {
    let sup_drift = field.sup_bound(s, t_end);
    let scale = variation_scale(field.spec());
    let passed = sup_drift == 0.0 || dt * sup_drift <= STEP_FRACTION * scale;
    StepCheck {
        dt,
        sup_drift,
        scale,
        passed,
    }
}

/// Index `n` with `n dt = t`, rejecting times off the grid.
pub fn grid_index(t: f64, dt: f64) -> Result<usize> {
    let n = (t / dt).round();
    if !(n >= 0.0) || (n * dt - t).abs() > 1e-9 * t.abs().max(dt) {
        return Err(LabError::InvalidArgument(format!(
            "time {t} is not on the grid of step {dt}"
        )));
    }
    Ok(n as usize)
}

/// Compiled drift admitted by the engine.
pub fn admit(spec: &DriftSpec) -> Result<Drift> {
    if !spec.is_bounded_smooth() {
        return Err(LabError::Contract(
            "the SDE engine integrates only mollified drifts; mollify the field first".into(),
        ));
    }
    Drift::new(spec)
}

/// Euler-Maruyama paths `X_{k+1} = X_k + b(t_k, X_k) dt + dW_k` from each
/// start, driven by stored increments (shared across starts).
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub dimension: usize,
    pub dt: f64,
    pub s: f64,
    pub t_end: f64,
    /// Grid index of `s` in the increment array.
    pub offset: usize,
    pub steps: usize,
    pub seed: u64,
    pub drift: DriftSpec,
    pub drift_id: String,
    pub starts: Vec<Vec<f64>>,
    pub start_weights: Vec<f64>,
    pub paths: usize,
    pub record_stride: usize,
    /// Shape `(starts, paths, records, d)`.
    pub positions: Vec<f64>,
    pub increments: Arc<Increments>,
    pub step_check: StepCheck,
    field: Drift,
}

/// JSON sidecar of an exported ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSidecar {
    pub shape: Vec<usize>,
    pub dt: f64,
    pub s: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub seed: u64,
    pub drift_id: String,
    pub increments_checksum: u64,
    pub dtype: String,
}

/// Runs one path, calling `visit(k, t_k, x_k, b(t_k, x_k))` for `k = 0..=steps`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_path(
    field: &Drift,
    x0: &[f64],
    offset: usize,
    steps: usize,
    dt: f64,
    inc: &Increments,
    path: usize,
    mut visit: impl FnMut(usize, f64, &[f64], &[f64]),
) -> Result<()> {
    let d = x0.len();
    let mut x = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    x[..d].copy_from_slice(x0);
    for k in 0..=steps {
        let t = (offset + k) as f64 * dt;
        field.eval_into(t, &x[..d], &mut b[..d]);
        visit(k, t, &x[..d], &b[..d]);
        if k == steps {
            break;
        }
        let dw = inc.step(path, offset + k);
        for i in 0..d {
            x[i] += b[i] * dt + dw[i];
        }
        if x[..d].iter().any(|v| !v.is_finite()) {
            return Err(LabError::Numerical(format!(
                "path {path} left the finite range at step {}",
                k + 1
            )));
        }
    }
    Ok(())
}

impl PathEnsemble {
    pub fn records(&self) -> usize {
        self.steps / self.record_stride + 1
    }

    /// Local step index of record `j`.
    pub fn record_step(&self, j: usize) -> usize {
        j * self.record_stride
    }

    pub fn time(&self, k: usize) -> f64 {
        (self.offset + k) as f64 * self.dt
    }

    pub fn record_time(&self, j: usize) -> f64 {
        self.time(self.record_step(j))
    }

    pub fn record_times(&self) -> Vec<f64> {
        (0..self.records()).map(|j| self.record_time(j)).collect()
    }

    pub fn field(&self) -> &Drift {
        &self.field
    }

    #[inline]
    pub fn position(&self, start: usize, path: usize, record: usize) -> &[f64] {
        let d = self.dimension;
        let i = ((start * self.paths + path) * self.records() + record) * d;
        &self.positions[i..i + d]
    }

    /// Re-integrates one path from its stored increments (bitwise equal to
    /// the stored positions at record steps).
    pub fn replay(
        &self,
        start: usize,
        path: usize,
        visit: impl FnMut(usize, f64, &[f64], &[f64]),
    ) -> Result<()> {
        integrate_path(
            &self.field,
            &self.starts[start],
            self.offset,
            self.steps,
            self.dt,
            &self.increments,
            path,
            visit,
        )
    }

    /// Per-coordinate sample variance of `X_t - x` at record `j` with its standard error.
    pub fn displacement_variance(&self, start: usize, record: usize) -> Vec<(f64, f64)> {
        let d = self.dimension;
        (0..d)
            .map(|k| {
                let ys: Vec<f64> = (0..self.paths)
                    .map(|p| self.position(start, p, record)[k] - self.starts[start][k])
                    .collect();
                (
                    crate::stats::variance(&ys),
                    crate::stats::variance_std_error(&ys),
                )
            })
            .collect()
    }

    pub fn sidecar(&self) -> EnsembleSidecar {
        EnsembleSidecar {
            shape: vec![
                self.starts.len(),
                self.paths,
                self.records(),
                self.dimension,
            ],
            dt: self.dt,
            s: self.s,
            t_end: self.t_end,
            record_stride: self.record_stride,
            seed: self.seed,
            drift_id: self.drift_id.clone(),
            increments_checksum: self.increments.checksum,
            dtype: "f64-le".into(),
        }
    }

    /// Writes `<stem>.bin` (positions) and `<stem>.json`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        let io = |e: std::io::Error| LabError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        let bytes: Vec<u8> = self
            .positions
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(dir.join(format!("{stem}.bin")), bytes).map_err(io)?;
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.sidecar())?,
        )
        .map_err(io)
    }
}

/// Simulates `b` from `x0` on `[s, t_end]` with fresh increments over `[0, t_end]`.
pub fn simulate_ensemble(
    b: &DriftSpec,
    x0: &StartSpec,
    s: f64,
    t_end: f64,
    settings: &EnsembleSettings,
) -> Result<PathEnsemble> {
    if settings.paths == 0 {
        return Err(LabError::InvalidArgument("need at least one path".into()));
    }
    let total = grid_index(t_end, settings.dt)?;
    let inc = Increments::generate(
        settings.seed,
        settings.paths,
        total.max(1),
        b.dimension,
        settings.dt,
    )?;
    simulate_coupled(
        b,
        x0,
        s,
        t_end,
        &Arc::new(inc),
        settings.record_stride,
        settings.relaxed_step_check,
    )
}

/// Simulates with the given increments (synchronous coupling).
pub fn simulate_coupled(
    b: &DriftSpec,
    x0: &StartSpec,
    s: f64,
    t_end: f64,
    increments: &Arc<Increments>,
    record_stride: usize,
    relaxed: bool,
) -> Result<PathEnsemble> {
    let field = admit(b)?;
    let d = b.dimension;
    let dt = increments.dt;
    if increments.dimension != d {
        return Err(LabError::InvalidArgument(
            "increments have the wrong dimension".into(),
        ));
    }
    if !(t_end > s && s >= 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "need 0 <= s < T, got s = {s}, T = {t_end}"
        )));
    }
    let offset = grid_index(s, dt)?;
    let end = grid_index(t_end, dt)?;
    if end > increments.steps {
        return Err(LabError::InvalidArgument(
            "horizon exceeds the stored increments".into(),
        ));
    }
    let steps = end - offset;
    if record_stride == 0 || steps % record_stride != 0 {
        return Err(LabError::InvalidArgument(format!(
            "record stride {record_stride} must divide the step count {steps}"
        )));
    }
    let check = step_check(&field, dt, s, t_end);
    if !check.passed && !relaxed {
        return Err(LabError::Configuration(format!(
            "dt sup|b| = {:.3e} exceeds {STEP_FRACTION} x variation scale {:.3e}",
            dt * check.sup_drift,
            check.scale
        )));
    }
    let (starts, start_weights) = x0.resolve(d)?;
    let paths = increments.paths;
    let records = steps / record_stride + 1;
    let row = records * d;
    (starts.len() * paths)
        .checked_mul(row)
        .filter(|n| *n <= 1 << 30)
        .ok_or_else(|| {
            LabError::Configuration("position array too large; raise record_stride".into())
        })?;
    let mut positions = vec![0.0; starts.len() * paths * row];
    let outcomes: Vec<Result<()>> = positions
        .par_chunks_mut(row)
        .enumerate()
        .map(|(i, chunk)| {
            let (start, path) = (i / paths, i % paths);
            integrate_path(
                &field,
                &starts[start],
                offset,
                steps,
                dt,
                increments,
                path,
                |k, _, x, _| {
                    if k % record_stride == 0 {
                        let j = k / record_stride;
                        chunk[j * d..(j + 1) * d].copy_from_slice(x);
                    }
                },
            )
        })
        .collect();
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(PathEnsemble {
        dimension: d,
        dt,
        s,
        t_end,
        offset,
        steps,
        seed: increments.seed,
        drift_id: b.id(),
        drift: b.clone(),
        starts,
        start_weights,
        paths,
        record_stride,
        positions,
        increments: increments.clone(),
        step_check: check,
        field,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn driftless_paths_are_brownian() {
        let ens = simulate_ensemble(
            &DriftSpec::zero(3, 1.0),
            &StartSpec::point(vec![0.5, 0.0, 0.0]),
            0.0,
            1.0,
            &EnsembleSettings::new(0.05, 4000, 3).with_stride(4),
        )
        .unwrap();
        assert_eq!(ens.records(), 6);
        for j in 1..ens.records() {
            let t = ens.record_time(j);
            for (var, se) in ens.displacement_variance(0, j) {
                assert!((var - t).abs() < 3.0 * se, "t = {t}: {var} +- {se}");
            }
        }
        let mut last = vec![];
        ens.replay(0, 17, |k, _, x, _| {
            if k == ens.steps {
                last = x.to_vec();
            }
        })
        .unwrap();
        assert_eq!(last.as_slice(), ens.position(0, 17, ens.records() - 1));
    }

    #[test]
    fn linear_mean_decays() {
        let x0 = vec![0.5, -0.25, 0.0];
        let t = 0.5;
        let ens = simulate_ensemble(
            &DriftSpec::linear_diagonal(-1.0, 3, 20.0),
            &StartSpec::point(x0.clone()),
            0.0,
            t,
            &EnsembleSettings::new(0.005, 4000, 11).with_stride(10),
        )
        .unwrap();
        let last = ens.records() - 1;
        for k in 0..3 {
            let xs: Vec<f64> = (0..ens.paths)
                .map(|p| ens.position(0, p, last)[k])
                .collect();
            let (m, se) = (crate::stats::mean(&xs), crate::stats::std_error(&xs));
            let exact = x0[k] * (-t).exp();
            assert!((m - exact).abs() < 3.0 * se + 0.01, "{m} vs {exact}");
        }
    }

    #[test]
    fn contract_and_grid_errors() {
        let st = StartSpec::point(vec![1.0, 0.0, 0.0]);
        let s = EnsembleSettings::new(0.01, 4, 0);
        let e = simulate_ensemble(&DriftSpec::hardy(0.5, 3, 1.0), &st, 0.0, 0.1, &s).unwrap_err();
        assert!(matches!(e, LabError::Contract(_)));
        assert!(simulate_ensemble(&DriftSpec::zero(3, 1.0), &st, 0.0, 0.105, &s).is_err());
        let steep = DriftSpec::gaussian(vec![100.0, 0.0, 0.0], 0.1, 1.0);
        assert!(matches!(
            simulate_ensemble(&steep, &st, 0.0, 0.1, &s),
            Err(LabError::Configuration(_))
        ));
        let ens = simulate_ensemble(&steep, &st, 0.0, 0.1, &s.clone().relaxed()).unwrap();
        assert!(!ens.step_check.passed);
    }

    #[test]
    fn shifted_start_reuses_increments() {
        let inc = Arc::new(Increments::generate(5, 8, 20, 3, 0.05).unwrap());
        let st = StartSpec::point(vec![0.0; 3]);
        let z = DriftSpec::zero(3, 1.0);
        let a = simulate_coupled(&z, &st, 0.0, 1.0, &inc, 1, false).unwrap();
        let b = simulate_coupled(&z, &st, 0.25, 1.0, &inc, 1, false).unwrap();
        assert_eq!(b.offset, 5);
        for p in 0..8 {
            let end_a = a.position(0, p, 20);
            let mid_a = a.position(0, p, 5);
            let end_b = b.position(0, p, 15);
            for k in 0..3 {
                assert!((end_a[k] - mid_a[k] - end_b[k]).abs() < 1e-12);
            }
        }
    }
}
