//! Lebesgue, Morrey, weak-Lebesgue and weighted norms of drift fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Drift, DriftSpec};
use crate::error::{LabError, Result};
use crate::quadrature::{
    ball_nodes, integrate_ball, sphere_area, GaussRule, RadialRule, SphereRule,
};
use crate::MAX_DIM;

/// Cells per axis of the midpoint rule used for fields without radial symmetry.
pub const MIDPOINT_CELLS: usize = 64;

/// Sharp constant `C_S` in `||phi||_{2d/(d-2)}^2 <= C_S ||grad phi||_2^2`:
/// `4 / (d (d-2) |S^d|^{2/d})`.
pub fn sobolev_constant(d: usize) -> f64 {
    let df = d as f64;
    let omega = sphere_area(d + 1);
    4.0 / (df * (df - 2.0) * omega.powf(2.0 / df))
}

fn point_on_axis(d: usize, r: f64) -> [f64; MAX_DIM] {
    let mut x = [0.0; MAX_DIM];
    x[0] = r;
    let _ = d;
    x
}

/// `|S^{d-1}| int_0^{r_max} rho^{d-1} g(rho, |b(t, rho e_1)|) d rho`.
fn radial_moment(
    field: &Drift,
    t: f64,
    r_max: f64,
    breaks: &[f64],
    rule: &RadialRule,
    g: impl Fn(f64, f64) -> f64,
) -> f64 {
    let d = field.dimension();
    let area = sphere_area(d);
    area * rule.integrate(r_max, breaks, |rho| {
        let x = point_on_axis(d, rho);
        let m = field.magnitude(t, &x[..d]);
        rho.powi(d as i32 - 1) * g(rho, m)
    })
}

/// Midpoint rule over `[-a, a]^d`: sum of `w * g(x, |b(t, x)|)`.
fn midpoint_sum(
    field: &Drift,
    t: f64,
    half: f64,
    cells: usize,
    g: impl Fn(&[f64], f64) -> f64 + Sync,
) -> f64 {
    let d = field.dimension();
    let h = 2.0 * half / cells as f64;
    let w = h.powi(d as i32);
    let slab = cells.pow(d as u32 - 1);
    let parts: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i0| {
            let mut acc = 0.0;
            let mut x = [0.0; MAX_DIM];
            x[0] = -half + (i0 as f64 + 0.5) * h;
            for rest in 0..slab {
                let mut q = rest;
                for k in 1..d {
                    x[k] = -half + ((q % cells) as f64 + 0.5) * h;
                    q /= cells;
                }
                let m = field.magnitude(t, &x[..d]);
                acc += g(&x[..d], m);
            }
            acc
        })
        .collect();
    w * parts.iter().sum::<f64>()
}

fn check_integrable(field: &Drift, t: f64, power: f64) -> Result<()> {
    let d = field.dimension();
    let r = field.support_radius();
    let g = |rho: f64| {
        let x = point_on_axis(d, rho);
        rho.powf(d as f64) * field.magnitude(t, &x[..d]).powf(power)
    };
    let (g1, g2) = (g(1e-6 * r), g(1e-9 * r));
    if g1 > 0.0 && g2 > 0.5 * g1 {
        return Err(LabError::Numerical(format!(
            "|b|^{power} is not integrable at the origin (rho^d |b|^{power} does not vanish)"
        )));
    }
    Ok(())
}

/// `||b(t, .)||_{L^d}`.
pub fn ld_norm(spec: &DriftSpec, t: f64) -> Result<f64> {
    let field = Drift::new(spec)?;
    ld_norm_of(&field, t)
}

fn ld_norm_of(field: &Drift, t: f64) -> Result<f64> {
    let d = field.dimension();
    let p = d as f64;
    let total = if field.spec().symmetry().is_radial() {
        check_integrable(field, t, p)?;
        radial_moment(
            field,
            t,
            field.support_radius(),
            &field.spec().radial_features(),
            &RadialRule::default(),
            |_, m| m.powf(p),
        )
    } else {
        midpoint_sum(field, t, field.support_radius(), MIDPOINT_CELLS, |_, m| {
            m.powf(p)
        })
    };
    if !total.is_finite() {
        return Err(LabError::Numerical(
            "L^d quadrature produced a non-finite value".into(),
        ));
    }
    Ok(total.powf(1.0 / p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevReport {
    pub delta: f64,
    pub sobolev_constant: f64,
    pub times: Vec<f64>,
    pub ld_norms: Vec<f64>,
}

/// `C_S sup_t ||b(t, .)||_d^2` over the given times.
pub fn sobolev_delta(spec: &DriftSpec, times: &[f64]) -> Result<SobolevReport> {
    if times.is_empty() {
        return Err(LabError::InvalidArgument(
            "sobolev_delta needs at least one time".into(),
        ));
    }
    let field = Drift::new(spec)?;
    let ld_norms = times
        .iter()
        .map(|&t| ld_norm_of(&field, t))
        .collect::<Result<Vec<_>>>()?;
    let cs = sobolev_constant(spec.dimension);
    let sup = ld_norms.iter().copied().fold(0.0, f64::max);
    Ok(SobolevReport {
        delta: cs * sup * sup,
        sobolev_constant: cs,
        times: times.to_vec(),
        ld_norms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorreyReport {
    pub value: f64,
    pub exponent: f64,
    pub center: Vec<f64>,
    pub radius: f64,
    pub balls: usize,
    /// The value is a maximum over the supplied grid, hence a lower bound.
    pub lower_bound: bool,
}

/// Default grid: 12 log-spaced radii over `[1e-3 R, R]`, centers on
/// `{-R/2, 0, R/2}^d`.
pub fn default_morrey_grid(spec: &DriftSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = spec.dimension;
    let r = spec.support_radius();
    let radii: Vec<f64> = (0..12)
        .map(|k| r * 1e-3 * 1000f64.powf(k as f64 / 11.0))
        .collect();
    let mut centers = vec![vec![0.0; d]];
    crate::quadrature::for_each_index(d, 3, |idx| {
        let c: Vec<f64> = idx.iter().map(|&i| (i as f64 - 1.0) * 0.5 * r).collect();
        if c.iter().any(|v| *v != 0.0) {
            centers.push(c);
        }
    });
    (centers, radii)
}

/// `max over (x, r) of r (|B_r|^{-1} int_{B_r(x)} |b(t, .)|^{2+eps})^{1/(2+eps)}`.
pub fn morrey_norm(
    spec: &DriftSpec,
    eps: f64,
    centers: &[Vec<f64>],
    radii: &[f64],
    t: f64,
) -> Result<MorreyReport> {
    if !(eps > 0.0) {
        return Err(LabError::InvalidArgument(
            "Morrey exponent offset must be positive".into(),
        ));
    }
    if centers.is_empty() || radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(LabError::InvalidArgument(
            "Morrey norm needs nonempty centers and positive radii".into(),
        ));
    }
    let d = spec.dimension;
    if centers.iter().any(|c| c.len() != d) {
        return Err(LabError::InvalidArgument(
            "center dimension mismatch".into(),
        ));
    }
    let field = Drift::new(spec)?;
    let p = 2.0 + eps;
    let radial = field.spec().symmetry().is_radial();
    let features = spec.radial_features();
    let fine = RadialRule::default();
    let coarse = RadialRule::new(64);
    let sphere = SphereRule::new(d, if d == 3 { 16 } else { 6 }, 32);
    let vol = crate::quadrature::ball_volume(d);
    let pairs: Vec<(usize, usize)> = (0..centers.len())
        .flat_map(|i| (0..radii.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let c = &centers[i];
            let r = radii[j];
            let at_origin = c.iter().all(|v| *v == 0.0);
            let integral = if at_origin && radial {
                radial_moment(&field, t, r, &features, &fine, |_, m| m.powf(p))
            } else {
                let dist = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut breaks = vec![dist];
                for f in &features {
                    breaks.push((dist - f).abs());
                    breaks.push(dist + f);
                }
                let mut b = [0.0; MAX_DIM];
                integrate_ball(&coarse, &sphere, c, r, &breaks, |x| {
                    field.eval_into(t, x, &mut b[..d]);
                    b[..d].iter().map(|v| v * v).sum::<f64>().powf(0.5 * p)
                })
            };
            r * (integral / (vol * r.powi(d as i32))).powf(1.0 / p)
        })
        .collect();
    let mut best = 0usize;
    for (k, v) in values.iter().enumerate() {
        if !v.is_finite() {
            let (i, j) = pairs[k];
            return Err(LabError::Numerical(format!(
                "Morrey quadrature failed at center {:?}, radius {}",
                centers[i], radii[j]
            )));
        }
        if *v > values[best] {
            best = k;
        }
    }
    let (i, j) = pairs[best];
    Ok(MorreyReport {
        value: values[best],
        exponent: p,
        center: centers[i].clone(),
        radius: radii[j],
        balls: pairs.len(),
        lower_bound: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakNormReport {
    pub value: f64,
    pub argmax_level: f64,
    /// `(s, s |{|b| > s}|^{1/d})` per level.
    pub per_level: Vec<(f64, f64)>,
    /// `||b||_d` by the same quadrature (radial or midpoint).
    pub ld_norm: Option<f64>,
    pub lower_bound: bool,
}

/// `max over s of s |{x : |b(t, x)| > s}|^{1/d}`.
pub fn weak_ld_norm(spec: &DriftSpec, levels: &[f64], t: f64) -> Result<WeakNormReport> {
    if levels.is_empty() || levels.iter().any(|s| !(*s > 0.0)) {
        return Err(LabError::InvalidArgument(
            "levels must be positive and nonempty".into(),
        ));
    }
    let field = Drift::new(spec)?;
    let d = spec.dimension;
    let df = d as f64;
    let radial = spec.symmetry().is_radial();
    let mut per_level = Vec::with_capacity(levels.len());
    let ld = if radial {
        let area = sphere_area(d);
        for &s in levels {
            let mut pts = vec![0.0];
            pts.extend(field.radial_crossings(t, s));
            pts.push(field.support_radius());
            let mut measure = 0.0;
            for w in pts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let x = point_on_axis(d, mid);
                if field.magnitude(t, &x[..d]) > s {
                    measure += area / df * (w[1].powi(d as i32) - w[0].powi(d as i32));
                }
            }
            per_level.push((s, s * measure.powf(1.0 / df)));
        }
        ld_norm_of(&field, t).ok()
    } else {
        let half = field.support_radius();
        for &s in levels {
            let measure = midpoint_sum(&field, t, half, MIDPOINT_CELLS, |_, m| {
                if m > s {
                    1.0
                } else {
                    0.0
                }
            });
            per_level.push((s, s * measure.powf(1.0 / df)));
        }
        Some(midpoint_sum(&field, t, half, MIDPOINT_CELLS, |_, m| m.powf(df)).powf(1.0 / df))
    };
    let (mut value, mut argmax_level) = (0.0, levels[0]);
    for &(s, v) in &per_level {
        if v > value {
            value = v;
            argmax_level = s;
        }
    }
    Ok(WeakNormReport {
        value,
        argmax_level,
        per_level,
        ld_norm: ld,
        lower_bound: true,
    })
}

/// Finite lattice of weight centers `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub spacing: f64,
    pub half_extent: f64,
    #[serde(default)]
    pub offset: Vec<f64>,
}

impl Lattice {
    /// `Z^d` restricted to `[-2R, 2R]^d`.
    pub fn default_for(support_radius: f64) -> Self {
        Self {
            spacing: 1.0,
            half_extent: 2.0 * support_radius,
            offset: vec![],
        }
    }

    pub fn points(&self, d: usize) -> Vec<Vec<f64>> {
        let n = (self.half_extent / self.spacing).floor() as i64;
        let count = (2 * n + 1) as usize;
        let mut out = Vec::with_capacity(count.pow(d as u32));
        crate::quadrature::for_each_index(d, count, |idx| {
            out.push(
                idx.iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        (i as i64 - n) as f64 * self.spacing
                            + self.offset.get(k).copied().unwrap_or(0.0)
                    })
                    .collect(),
            );
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormReport {
    pub value: f64,
    pub argmax_center: Vec<f64>,
    pub kappa: f64,
    pub theta: f64,
    pub centers: usize,
}

/// Default weight exponent `(d+1)/2 + 1/2`.
pub fn default_theta(d: usize) -> f64 {
    (d as f64 + 1.0) / 2.0 + 0.5
}

/// `max_z (int_{t1}^{t2} int |f|^2 rho(. - z))^{1/2}` with
/// `rho(x) = (1 + kappa |x|^2)^{-theta}`; `f2(t, x)` returns `|f|^2` and
/// vanishes outside `B_support`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_norm_with(
    d: usize,
    support: f64,
    features: &[f64],
    time_constant: bool,
    t1: f64,
    t2: f64,
    kappa: f64,
    theta: f64,
    lattice: &Lattice,
    f2: impl Fn(f64, &[f64]) -> f64 + Sync,
) -> Result<WeightedNormReport> {
    if !(theta > d as f64 / 2.0) {
        return Err(LabError::InvalidArgument(format!(
            "theta must exceed d/2, got {theta}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(LabError::InvalidArgument("kappa must be positive".into()));
    }
    if t2 < t1 {
        return Err(LabError::InvalidArgument("need t1 <= t2".into()));
    }
    let radial = RadialRule::new(64);
    let sphere = SphereRule::new(d, if d == 3 { 12 } else { 5 }, 24);
    let times: Vec<(f64, f64)> = if time_constant || t2 == t1 {
        vec![(t1, t2 - t1)]
    } else {
        let g = GaussRule::new(8);
        let (h, m) = (0.5 * (t2 - t1), 0.5 * (t1 + t2));
        g.nodes
            .iter()
            .zip(&g.weights)
            .map(|(x, w)| (m + h * x, h * w))
            .collect()
    };
    let nodes = ball_nodes(&radial, &sphere, &vec![0.0; d], support, features);
    let mut samples: Vec<([f64; MAX_DIM], f64)> = vec![];
    for &(t, wt) in &times {
        for (p, w) in &nodes {
            let v = f2(t, &p[..d]);
            if v != 0.0 {
                samples.push((*p, v * w * wt));
            }
        }
    }
    let centers = lattice.points(d);
    let vals: Vec<f64> = centers
        .par_iter()
        .map(|z| {
            samples
                .iter()
                .map(|(p, v)| {
                    let r2: f64 = (0..d).map(|k| (p[k] - z[k]).powi(2)).sum();
                    v * (1.0 + kappa * r2).powf(-theta)
                })
                .sum::<f64>()
        })
        .collect();
    let mut best = 0;
    for (i, v) in vals.iter().enumerate() {
        if !v.is_finite() {
            return Err(LabError::Numerical(
                "weighted-norm quadrature produced a non-finite value".into(),
            ));
        }
        if *v > vals[best] {
            best = i;
        }
    }
    Ok(WeightedNormReport {
        value: vals[best].max(0.0).sqrt(),
        argmax_center: centers[best].clone(),
        kappa,
        theta,
        centers: centers.len(),
    })
}

/// [`weighted_norm_with`] for a drift field.
pub fn weighted_norm_rho(
    spec: &DriftSpec,
    t1: f64,
    t2: f64,
    kappa: f64,
    theta: f64,
    lattice: &Lattice,
) -> Result<WeightedNormReport> {
    let field = Drift::new(spec)?;
    let d = spec.dimension;
    weighted_norm_with(
        d,
        spec.support_radius(),
        &spec.radial_features(),
        spec.is_time_constant(),
        t1,
        t2,
        kappa,
        theta,
        lattice,
        |t, x| {
            let m = field.magnitude(t, x);
            m * m
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sobolev_constant_in_three_dimensions() {
        // 4 / (3 (2 pi^2)^{2/3})
        let want = 4.0 / (3.0 * (2.0 * std::f64::consts::PI.powi(2)).powf(2.0 / 3.0));
        assert!((sobolev_constant(3) - want).abs() < 1e-14);
        assert!((sobolev_constant(3) - 0.18255).abs() < 1e-4);
    }

    #[test]
    fn indicator_ball_sobolev_delta() {
        let s = DriftSpec::indicator_ball(1.0, vec![1.0, 0.0, 0.0], 3.0);
        let r = sobolev_delta(&s, &[0.0]).unwrap();
        let want = sobolev_constant(3) * (4.0 * std::f64::consts::PI / 3.0).powf(2.0 / 3.0);
        assert!(
            (r.delta - want).abs() < 1e-10 * want,
            "{} vs {want}",
            r.delta
        );
        let s3 = DriftSpec::scaled(3.0, s);
        let r3 = sobolev_delta(&s3, &[0.0]).unwrap();
        assert!((r3.delta - 9.0 * r.delta).abs() < 1e-12 * r3.delta);
        assert_eq!(
            sobolev_delta(&DriftSpec::zero(3, 1.0), &[0.0, 1.0])
                .unwrap()
                .delta,
            0.0
        );
    }

    #[test]
    fn hardy_field_is_not_in_ld() {
        let h = DriftSpec::hardy(1.0, 3, 2.0);
        assert!(matches!(
            sobolev_delta(&h, &[0.0]),
            Err(LabError::Numerical(_))
        ));
    }

    #[test]
    fn hardy_morrey_norm_at_origin() {
        let h = DriftSpec::hardy(1.0, 3, 8.0);
        let eps = 1e-6;
        let r = morrey_norm(&h, eps, &[vec![0.0; 3]], &[0.5, 1.0, 2.0], 0.0).unwrap();
        let want = (3.0 / (1.0 - eps)).powf(1.0 / (2.0 + eps));
        assert!((r.value - want).abs() < 1e-8, "{} vs {want}", r.value);
        let z = morrey_norm(&DriftSpec::zero(3, 1.0), 0.5, &[vec![0.0; 3]], &[0.5], 0.0).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn hardy_weak_norm() {
        let h = DriftSpec::hardy(1.0, 3, 20.0);
        let r = weak_ld_norm(&h, &[0.5, 1.0, 2.0], 0.0).unwrap();
        let want = (4.0 * std::f64::consts::PI / 3.0).powf(1.0 / 3.0);
        for (_, v) in &r.per_level {
            assert!((v - want).abs() < 1e-9, "{v}");
        }
        let r2 = weak_ld_norm(&DriftSpec::scaled(2.0, h), &[1.0, 2.0, 4.0], 0.0).unwrap();
        assert!((r2.value - 2.0 * want).abs() < 1e-9);
    }

    #[test]
    fn rho_weighted_indicator() {
        let f = DriftSpec::indicator_ball(1.0, vec![1.0, 0.0, 0.0], 3.0);
        let lat = Lattice {
            spacing: 1.0,
            half_extent: 1.0,
            offset: vec![],
        };
        let r = weighted_norm_rho(&f, 0.0, 1.0, 0.01, 2.0, &lat).unwrap();
        let g = GaussRule::new(64);
        let want = (4.0
            * std::f64::consts::PI
            * g.integrate(0.0, 1.0, |r| r * r * (1.0 + 0.01 * r * r).powi(-2)))
        .sqrt();
        assert!(
            (r.value - want).abs() < 1e-9 * want,
            "{} vs {want}",
            r.value
        );
        assert_eq!(r.argmax_center, vec![0.0; 3]);
        let shifted = Lattice {
            spacing: 1.0,
            half_extent: 1.0,
            offset: vec![0.5; 3],
        };
        assert!(
            weighted_norm_rho(&f, 0.0, 1.0, 0.01, 2.0, &shifted)
                .unwrap()
                .value
                <= r.value
        );
        assert!(weighted_norm_rho(&f, 0.0, 1.0, 0.01, 1.5, &lat).is_err());
    }
}
