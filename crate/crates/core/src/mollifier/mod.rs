//! Smooth bounded approximations `b_m = c_m E_{eps_m}(1_m b)`.

pub mod kernel;

use serde::{Deserialize, Serialize};

use crate::drift::formbound::{estimate_form_bound, TestFunctionFamily};
use crate::drift::{Drift, DriftKind, DriftSpec};
use crate::error::{LabError, Result};
use crate::quadrature::{sphere_area, GaussRule, RadialRule, TensorRule};
use crate::MAX_DIM;

/// Levels `m`, widths `eps_m`, scales `c_m` and the final-level L2 tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifySchedule {
    pub levels: Vec<f64>,
    pub widths: Vec<f64>,
    pub scales: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    f64::INFINITY
}

impl MollifySchedule {
    /// `eps_m = min(1/m^2, eps0)`, `c_m = 1 - 1/m`.
    pub fn from_levels(levels: &[f64], eps0: f64, tolerance: f64) -> Result<Self> {
        let s = Self {
            levels: levels.to_vec(),
            widths: levels.iter().map(|m| (1.0 / (m * m)).min(eps0)).collect(),
            scales: levels.iter().map(|m| 1.0 - 1.0 / m).collect(),
            tolerance,
        };
        s.validate()?;
        Ok(s)
    }

    /// `m = 2^j` for `j` in `j0..=j1`.
    pub fn dyadic(j0: i32, j1: i32, eps0: f64, tolerance: f64) -> Result<Self> {
        let levels: Vec<f64> = (j0..=j1).map(|j| 2f64.powi(j)).collect();
        Self::from_levels(&levels, eps0, tolerance)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.levels.len();
        if n == 0 {
            return Err(LabError::InvalidArgument("schedule is empty".into()));
        }
        if self.widths.len() != n || self.scales.len() != n {
            return Err(LabError::InvalidArgument(
                "levels, widths and scales must have equal length".into(),
            ));
        }
        if self.levels.iter().any(|m| !(*m > 0.0)) || self.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::InvalidArgument(
                "levels must be positive and strictly increasing".into(),
            ));
        }
        if self.widths.iter().any(|e| !(*e > 0.0)) || self.widths.windows(2).any(|w| w[1] >= w[0]) {
            return Err(LabError::InvalidArgument(
                "widths must be positive and strictly decreasing".into(),
            ));
        }
        if self.scales.iter().any(|c| !(*c > 0.0 && *c <= 1.0))
            || self.scales.windows(2).any(|w| w[1] < w[0])
        {
            return Err(LabError::InvalidArgument(
                "scales must lie in (0, 1] and be nondecreasing".into(),
            ));
        }
        Ok(())
    }

    /// `b_m` at level index `k`.
    pub fn level_spec(&self, spec: &DriftSpec, k: usize) -> DriftSpec {
        if matches!(spec.kind, DriftKind::Zero) {
            return spec.clone();
        }
        DriftSpec::mollified(
            spec.clone(),
            Some(self.levels[k]),
            self.widths[k],
            self.scales[k],
        )
    }
}

/// `b 1{|b| <= m}`.
pub fn cutoff_by_level(spec: &DriftSpec, m: f64) -> Result<DriftSpec> {
    if !(m > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "truncation level must be positive, got {m}"
        )));
    }
    if matches!(spec.kind, DriftKind::Zero) {
        return Ok(spec.clone());
    }
    Ok(DriftSpec::truncated(spec.clone(), m))
}

/// Convolution with the space-time bump of width `eps`.
pub fn friedrichs_mollify(spec: &DriftSpec, eps: f64) -> Result<DriftSpec> {
    if !(eps > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "mollifier width must be positive, got {eps}"
        )));
    }
    if matches!(spec.kind, DriftKind::Zero) {
        return Ok(spec.clone());
    }
    let out = DriftSpec::mollified(spec.clone(), None, eps, 1.0);
    out.validate()?;
    Ok(out)
}

/// `||a - b||_{L^2([0, T] x [-L, L]^d)}`.
pub fn l2_distance(a: &DriftSpec, b: &DriftSpec, half_width: f64, horizon: f64) -> Result<f64> {
    if a.dimension != b.dimension {
        return Err(LabError::InvalidArgument("dimension mismatch".into()));
    }
    let fa = Drift::new(a)?;
    let fb = Drift::new(b)?;
    l2_distance_of(&fa, &fb, half_width, horizon)
}

fn l2_distance_of(fa: &Drift, fb: &Drift, half_width: f64, horizon: f64) -> Result<f64> {
    let d = fa.dimension();
    let (sa, sb) = (fa.spec(), fb.spec());
    let times: Vec<(f64, f64)> = if sa.is_time_constant() && sb.is_time_constant() {
        vec![(0.0, horizon)]
    } else {
        let g = GaussRule::new(16);
        g.nodes
            .iter()
            .zip(&g.weights)
            .map(|(x, w)| (0.5 * horizon * (1.0 + x), 0.5 * horizon * w))
            .collect()
    };
    let support = sa.support_radius().max(sb.support_radius());
    let both_radial = sa.symmetry().is_radial() && sb.symmetry().is_radial() && {
        // same rotational type so the difference is radial as well
        std::mem::discriminant(&sa.symmetry()) == std::mem::discriminant(&sb.symmetry())
            || matches!(sa.kind, DriftKind::Zero)
            || matches!(sb.kind, DriftKind::Zero)
    };
    let mut total = 0.0;
    let mut va = [0.0; MAX_DIM];
    let mut vb = [0.0; MAX_DIM];
    let sq = |t: f64, x: &[f64], va: &mut [f64], vb: &mut [f64]| -> f64 {
        fa.eval_into(t, x, va);
        fb.eval_into(t, x, vb);
        (0..x.len()).map(|k| (va[k] - vb[k]).powi(2)).sum()
    };
    // radial part over the inscribed ball, tensor rule over the rest of the box
    let inner = if both_radial {
        half_width.min(support)
    } else {
        0.0
    };
    if inner > 0.0 {
        let mut breaks = sa.radial_features();
        breaks.extend(sb.radial_features());
        let rule = RadialRule::default();
        let area = sphere_area(d);
        for &(t, wt) in &times {
            total += wt
                * area
                * rule.integrate(inner, &breaks, |r| {
                    let mut x = [0.0; MAX_DIM];
                    x[0] = r;
                    r.powi(d as i32 - 1) * sq(t, &x[..d], &mut va[..d], &mut vb[..d])
                });
        }
    }
    let l = half_width.min(support);
    if !(both_radial && half_width >= support) {
        let rule = TensorRule::new(8, 8);
        let lo = vec![-l; d];
        let hi = vec![l; d];
        for &(t, wt) in &times {
            total += wt
                * rule.integrate(&lo, &hi, |x| {
                    if inner > 0.0 && x.iter().map(|v| v * v).sum::<f64>() < inner * inner {
                        return 0.0;
                    }
                    sq(t, x, &mut va[..d], &mut vb[..d])
                });
        }
    }
    if !total.is_finite() {
        return Err(LabError::Numerical(
            "L2 distance quadrature produced a non-finite value".into(),
        ));
    }
    Ok(total.sqrt())
}

/// Largest `|b(0, x)|` over a log-spaced radial scan (radial fields) or over a
/// midpoint lattice of the support box.
pub fn sup_norm(field: &Drift, t: f64) -> f64 {
    let d = field.dimension();
    let r = field.support_radius();
    if field.spec().symmetry().is_radial() {
        let n = 6000;
        let lo = r * 1e-9;
        let ratio = (r / lo).powf(1.0 / n as f64);
        let mut best: f64 = 0.0;
        let mut x = [0.0; MAX_DIM];
        let mut rho = lo;
        for _ in 0..=n {
            x[0] = rho;
            best = best.max(field.magnitude(t, &x[..d]));
            rho *= ratio;
        }
        best
    } else {
        let n = 24;
        let h = 2.0 * r / n as f64;
        let mut best: f64 = 0.0;
        crate::quadrature::for_each_index(d, n, |idx| {
            let mut x = [0.0; MAX_DIM];
            for k in 0..d {
                x[k] = -r + (idx[k] as f64 + 0.5) * h;
            }
            best = best.max(field.magnitude(t, &x[..d]));
        });
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub m: f64,
    pub eps: f64,
    pub c_m: f64,
    /// `||b_m - b||_{L^2([0,T] x box)}`.
    pub l2_distance: f64,
    /// `||1_m b - b||^2_{L^2([0,T] x box)}` before mollification.
    pub truncation_l2_sq: f64,
    pub delta_hat: f64,
    /// Largest quotient of `b_m` divided by `delta_hat(b)`.
    pub max_quotient_ratio: f64,
    pub sup_norm: f64,
    pub form_bound_ok: bool,
    pub bounded_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxSequenceReport {
    pub base_delta_hat: f64,
    pub family_descriptor: String,
    pub levels: Vec<LevelRow>,
    pub tolerance: f64,
    pub final_below_tolerance: bool,
    pub distances_monotone: bool,
}

/// Relative slack in the form-bound preservation check.
pub const FORM_BOUND_SLACK: f64 = 1e-2;

/// Builds `b_m` for each level and measures L2 convergence, form-bound
/// preservation and boundedness.
pub fn build_approx_sequence(
    spec: &DriftSpec,
    schedule: &MollifySchedule,
    half_width: f64,
    horizon: f64,
    family: &TestFunctionFamily,
) -> Result<ApproxSequenceReport> {
    schedule.validate()?;
    if !(half_width > 0.0 && horizon > 0.0) {
        return Err(LabError::InvalidArgument(
            "box half-width and horizon must be positive".into(),
        ));
    }
    let times = time_samples(spec, horizon);
    let base = estimate_form_bound(spec, family, &times)?;
    let base_field = Drift::new(spec)?;
    let mut levels = Vec::with_capacity(schedule.len());
    for k in 0..schedule.len() {
        let (m, eps, c_m) = (schedule.levels[k], schedule.widths[k], schedule.scales[k]);
        let bm = schedule.level_spec(spec, k);
        let field = Drift::new(&bm)?;
        let trunc = cutoff_by_level(spec, m)?;
        let trunc_field = Drift::new(&trunc)?;
        let l2 = l2_distance_of(&field, &base_field, half_width, horizon)?;
        let tr = l2_distance_of(&trunc_field, &base_field, half_width, horizon)?;
        let rep = estimate_form_bound(&bm, family, &times)?;
        let max_q = rep.quotients.iter().map(|q| q.value).fold(0.0, f64::max);
        let ratio = if base.delta_hat > 0.0 {
            max_q / base.delta_hat
        } else if max_q == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let sup = times
            .iter()
            .map(|&t| sup_norm(&field, t))
            .fold(0.0, f64::max);
        levels.push(LevelRow {
            m,
            eps,
            c_m,
            l2_distance: l2,
            truncation_l2_sq: tr * tr,
            delta_hat: rep.delta_hat,
            max_quotient_ratio: ratio,
            sup_norm: sup,
            form_bound_ok: max_q <= base.delta_hat * (1.0 + FORM_BOUND_SLACK),
            bounded_ok: sup <= c_m * m * (1.0 + 1e-9),
        });
    }
    let last = levels.last().map(|r| r.l2_distance).unwrap_or(0.0);
    let monotone = levels
        .windows(2)
        .all(|w| w[1].l2_distance <= w[0].l2_distance);
    Ok(ApproxSequenceReport {
        base_delta_hat: base.delta_hat,
        family_descriptor: base.family_descriptor,
        levels,
        tolerance: schedule.tolerance,
        final_below_tolerance: last <= schedule.tolerance,
        distances_monotone: monotone,
    })
}

fn time_samples(spec: &DriftSpec, horizon: f64) -> Vec<f64> {
    if spec.is_time_constant() {
        vec![0.0]
    } else {
        crate::drift::formbound::time_grid(0.0, horizon, 5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::eval_drift;

    #[test]
    fn schedule_defaults_and_validation() {
        let s = MollifySchedule::dyadic(2, 5, 0.05, 1.0).unwrap();
        assert_eq!(s.levels, vec![4.0, 8.0, 16.0, 32.0]);
        assert_eq!(s.widths[0], 0.05);
        assert_eq!(s.widths[1], 1.0 / 64.0);
        assert_eq!(s.scales[3], 1.0 - 1.0 / 32.0);
        assert!(MollifySchedule::from_levels(&[2.0, 1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn truncation_examples() {
        let z = cutoff_by_level(&DriftSpec::zero(3, 1.0), 5.0).unwrap();
        assert_eq!(z, DriftSpec::zero(3, 1.0));
        let h = DriftSpec::hardy(1.0, 3, 4.0);
        let big = cutoff_by_level(&h, 1e6).unwrap();
        for &r in &[0.01, 0.3, 1.9] {
            let x = [r, 0.0, 0.0];
            assert_eq!(
                eval_drift(&big, 0.0, &x).unwrap(),
                eval_drift(&h, 0.0, &x).unwrap()
            );
        }
        let t = cutoff_by_level(&h, 10.0).unwrap();
        assert_eq!(
            eval_drift(&t, 0.0, &[0.099, 0.0, 0.0]).unwrap(),
            vec![0.0; 3]
        );
        assert!(eval_drift(&t, 0.0, &[0.101, 0.0, 0.0]).unwrap()[0] < 0.0);
    }

    #[test]
    fn mollifying_constants_and_linear_fields() {
        let c = DriftSpec::constant(vec![1.0, -2.0, 0.5], 4.0);
        let mc = friedrichs_mollify(&c, 0.05).unwrap();
        let v = eval_drift(&mc, 0.0, &[0.3, 0.2, -0.1]).unwrap();
        for (a, b) in v.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
        let a = vec![
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 0.0],
            vec![0.3, 0.0, -0.5],
        ];
        let l = DriftSpec::linear(a.clone(), 4.0);
        let ml = friedrichs_mollify(&l, 0.05).unwrap();
        let x = [0.3, 0.2, -0.1];
        let v = eval_drift(&ml, 0.0, &x).unwrap();
        for i in 0..3 {
            let want: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((v[i] - want).abs() < 1e-12, "{i}: {} {want}", v[i]);
        }
        assert_eq!(
            friedrichs_mollify(&DriftSpec::zero(3, 1.0), 0.1).unwrap(),
            DriftSpec::zero(3, 1.0)
        );
    }

    #[test]
    fn radial_table_matches_direct_rule() {
        // radially tabulated mollification agrees with the generic discrete rule
        let g = DriftSpec::gaussian(vec![0.0, 0.0, 1.0], 0.4, 3.0);
        let m = friedrichs_mollify(&g, 0.2).unwrap();
        let f = Drift::new(&m).unwrap();
        let x = [0.3, -0.2, 0.25];
        let mut v = [0.0; 3];
        f.eval_into(0.0, &x, &mut v);
        let r2: f64 = x.iter().map(|a| a * a).sum();
        // exact convolution of a Gaussian with a narrow bump is close to the Gaussian
        let direct = (-r2 / (2.0 * 0.16f64)).exp();
        assert!((v[2] - direct).abs() < 0.03, "{} {direct}", v[2]);
        assert_eq!(v[0], 0.0);
    }

    #[test]
    fn truncation_error_matches_closed_form() {
        let h = DriftSpec::hardy(1.0, 3, 2.0);
        for &m in &[10.0, 100.0] {
            let t = cutoff_by_level(&h, m).unwrap();
            let d = l2_distance(&t, &h, 2.0, 1.0).unwrap();
            let want = 4.0 * std::f64::consts::PI / m;
            assert!((d * d - want).abs() < 1e-6 * want, "{} {want}", d * d);
        }
    }
}
