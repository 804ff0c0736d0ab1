use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::PathEnsemble;
use crate::drift::{Drift, DriftSpec};
use crate::error::{LabError, Result};
use crate::quadrature::{ball_nodes, sphere_area, GaussRule, RadialRule, SphereRule};
use crate::stats::{mean, std_error};

/// Closed-form scalar test functions `h(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TestFn {
    /// `amplitude` on `B_radius(center)`.
    IndicatorBall {
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<(f64, f64)>,
    },
    /// `amplitude exp(-|x - center|^2 / (2 width^2))`.
    Gaussian {
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<(f64, f64)>,
    },
    /// `amplitude (1 - |x - center|^2 / radius^2)^2` on `B_radius(center)`.
    PolynomialBump {
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        window: Option<(f64, f64)>,
    },
}

fn one() -> f64 {
    1.0
}

impl TestFn {
    pub fn indicator_ball(radius: f64) -> Self {
        TestFn::IndicatorBall {
            radius,
            amplitude: 1.0,
            center: vec![],
            window: None,
        }
    }

    fn parts(&self) -> (f64, &[f64], Option<(f64, f64)>) {
        match self {
            TestFn::IndicatorBall {
                amplitude,
                center,
                window,
                ..
            }
            | TestFn::Gaussian {
                amplitude,
                center,
                window,
                ..
            }
            | TestFn::PolynomialBump {
                amplitude,
                center,
                window,
                ..
            } => (*amplitude, center, *window),
        }
    }

    /// `h` rescaled by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            TestFn::IndicatorBall { amplitude, .. }
            | TestFn::Gaussian { amplitude, .. }
            | TestFn::PolynomialBump { amplitude, .. } => *amplitude *= lambda,
        }
        out
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let (a, c, w) = self.parts();
        let scale = match self {
            TestFn::IndicatorBall { radius, .. } | TestFn::PolynomialBump { radius, .. } => *radius,
            TestFn::Gaussian { width, .. } => *width,
        };
        if !(scale > 0.0) || !a.is_finite() {
            return Err(LabError::InvalidArgument(
                "test function needs a positive scale and finite amplitude".into(),
            ));
        }
        if !c.is_empty() && c.len() != d {
            return Err(LabError::InvalidArgument(
                "test function center has the wrong dimension".into(),
            ));
        }
        if let Some((t0, t1)) = w {
            if !(t0 <= t1) {
                return Err(LabError::InvalidArgument("empty time window".into()));
            }
        }
        Ok(())
    }

    fn active(&self, t: f64) -> bool {
        self.parts().2.is_none_or(|(a, b)| t >= a && t <= b)
    }

    /// Spatial profile at distance `r` from the center (without the amplitude).
    fn profile(&self, r: f64) -> f64 {
        match self {
            TestFn::IndicatorBall { radius, .. } => {
                if r <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            TestFn::Gaussian { width, .. } => (-r * r / (2.0 * width * width)).exp(),
            TestFn::PolynomialBump { radius, .. } => {
                if r < *radius {
                    let u = 1.0 - r * r / (radius * radius);
                    u * u
                } else {
                    0.0
                }
            }
        }
    }

    /// Radius of the (numerical) support around the center.
    fn extent(&self) -> f64 {
        match self {
            TestFn::IndicatorBall { radius, .. } | TestFn::PolynomialBump { radius, .. } => *radius,
            TestFn::Gaussian { width, .. } => 9.0 * width,
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            TestFn::Gaussian { width, .. } => vec![*width, 3.0 * width],
            _ => vec![],
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        if !self.active(t) {
            return 0.0;
        }
        let (a, c, _) = self.parts();
        let r2: f64 = x
            .iter()
            .enumerate()
            .map(|(k, v)| (v - c.get(k).copied().unwrap_or(0.0)).powi(2))
            .sum();
        a * self.profile(r2.sqrt())
    }

    fn window_length(&self, t0: f64, t1: f64) -> f64 {
        match self.parts().2 {
            None => t1 - t0,
            Some((a, b)) => (b.min(t1) - a.max(t0)).max(0.0),
        }
    }

    /// `||h||_{L^mu([t0, t1] x R^d)}` by radial quadrature.
    pub fn lmu_norm(&self, mu: f64, d: usize, t0: f64, t1: f64) -> f64 {
        let a = self.parts().0.abs();
        if a == 0.0 {
            return 0.0;
        }
        let radial = RadialRule::new(64);
        let space = sphere_area(d)
            * radial.integrate(self.extent(), &self.breakpoints(), |r| {
                self.profile(r).powf(mu) * r.powi(d as i32 - 1)
            });
        a * (self.window_length(t0, t1) * space).powf(1.0 / mu)
    }

    fn center(&self, d: usize) -> Vec<f64> {
        let c = self.parts().1;
        if c.is_empty() {
            vec![0.0; d]
        } else {
            c.to_vec()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrylovReport {
    /// Largest per-start estimate of `E sum |g h|(t_k, X_k) dt`.
    pub estimate: f64,
    pub std_error: f64,
    pub start_index: usize,
    pub per_start: Vec<f64>,
    pub reference_norm: f64,
    /// `estimate / reference_norm` (NaN when the norm vanishes).
    pub ratio: f64,
    pub exponent: f64,
    pub norm_kind: String,
}

/// Per-path left-point sums `sum_k w(t_k, X_k) dt`, in path order.
fn occupation_sums(
    ens: &PathEnsemble,
    start: usize,
    w: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
) -> Result<Vec<f64>> {
    (0..ens.paths)
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            ens.replay(start, p, |k, t, x, _| {
                if k < ens.steps {
                    acc += w(t, x).abs();
                }
            })?;
            Ok(acc * ens.dt)
        })
        .collect()
}

fn occupation(
    ens: &PathEnsemble,
    w: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    reference: f64,
    exponent: f64,
    kind: &str,
) -> Result<KrylovReport> {
    let mut per_start = vec![];
    let mut errors = vec![];
    for x in 0..ens.starts.len() {
        let sums = occupation_sums(ens, x, w)?;
        per_start.push(mean(&sums));
        errors.push(std_error(&sums));
    }
    let best = (0..per_start.len()).fold(0, |b, i| if per_start[i] > per_start[b] { i } else { b });
    let estimate = per_start[best];
    Ok(KrylovReport {
        estimate,
        std_error: errors[best],
        start_index: best,
        per_start,
        reference_norm: reference,
        ratio: if reference > 0.0 {
            estimate / reference
        } else {
            f64::NAN
        },
        exponent,
        norm_kind: kind.into(),
    })
}

/// Monte Carlo occupation functional `E int_s^T |h(t, X_t)| dt` against `||h||_{L^mu}`.
pub fn krylov_functional(ens: &PathEnsemble, h: &TestFn, mu: f64) -> Result<KrylovReport> {
    let d = ens.dimension;
    if !(mu > (d as f64 + 2.0) / 2.0) {
        return Err(LabError::InvalidArgument(format!(
            "mu must exceed (d+2)/2 = {}, got {mu}",
            (d as f64 + 2.0) / 2.0
        )));
    }
    h.validate(d)?;
    let reference = h.lmu_norm(mu, d, ens.s, ens.t_end);
    occupation(ens, &|t, x| h.eval(t, x), reference, mu, "L^mu")
}

/// Admissible exponent interval `]d, delta^{-1/2}[`.
pub fn admissible_q(d: usize, delta_hat: f64) -> Result<(f64, f64)> {
    let upper = if delta_hat > 0.0 {
        delta_hat.powf(-0.5)
    } else {
        f64::INFINITY
    };
    if upper <= d as f64 {
        return Err(LabError::InfeasibleExponent(format!(
            "q-interval ]{d}, {upper}[ is empty for delta_hat = {delta_hat}"
        )));
    }
    Ok((d as f64, upper))
}

/// `(int int g^2 |h|^q)^{1/q}` by Gauss time nodes times a ball rule around `h`.
pub fn composite_norm(g: &DriftSpec, h: &TestFn, q: f64, t0: f64, t1: f64) -> Result<f64> {
    let d = g.dimension;
    let field = Drift::new(g)?;
    let (a0, b0) = match h.parts().2 {
        None => (t0, t1),
        Some((a, b)) => (a.max(t0), b.min(t1)),
    };
    if !(b0 > a0) || h.parts().0 == 0.0 {
        return Ok(0.0);
    }
    let times: Vec<(f64, f64)> = if g.is_time_constant() {
        vec![(a0, b0 - a0)]
    } else {
        let rule = GaussRule::new(16);
        let (half, mid) = (0.5 * (b0 - a0), 0.5 * (a0 + b0));
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| (mid + half * x, half * w))
            .collect()
    };
    let radial = RadialRule::new(64);
    let sphere = SphereRule::new(d, if d == 3 { 16 } else { 6 }, 32);
    let mut breaks = h.breakpoints();
    breaks.extend(g.radial_features());
    let nodes = ball_nodes(&radial, &sphere, &h.center(d), h.extent(), &breaks);
    let mut total = 0.0;
    for &(t, wt) in &times {
        for (x, w) in &nodes {
            let gv = field.magnitude(t, &x[..d]);
            let hv = h.eval(t, &x[..d]).abs();
            if hv > 0.0 {
                total += wt * w * gv * gv * hv.powf(q);
            }
        }
    }
    if !total.is_finite() {
        return Err(LabError::Numerical(
            "composite norm quadrature is not finite".into(),
        ));
    }
    Ok(total.powf(1.0 / q))
}

/// Monte Carlo `E int |g h|(t, X_t) dt` against `||g |h|^{q/2}||_{L^2}^{2/q}`,
/// with `q` in `]d, delta_hat^{-1/2}[`.
pub fn krylov_g_functional(
    ens: &PathEnsemble,
    g: &DriftSpec,
    h: &TestFn,
    q: f64,
    delta_hat: f64,
) -> Result<KrylovReport> {
    let d = ens.dimension;
    let (lo, hi) = admissible_q(d, delta_hat)?;
    if !(q > lo && q < hi) {
        return Err(LabError::InvalidArgument(format!(
            "q = {q} lies outside ]{lo}, {hi}["
        )));
    }
    if g.dimension != d {
        return Err(LabError::InvalidArgument(
            "g has the wrong dimension".into(),
        ));
    }
    h.validate(d)?;
    let field = Drift::new(g)?;
    let reference = composite_norm(g, h, q, ens.s, ens.t_end)?;
    occupation(
        ens,
        &|t, x| field.magnitude(t, x) * h.eval(t, x),
        reference,
        q,
        "composite",
    )
}

/// `P(|Z| <= a)` for a standard Gaussian vector in `R^3`.
pub fn chi3_cdf(a: f64) -> f64 {
    use statrs::function::erf::erf;
    erf(a / 2f64.sqrt()) - (2.0 / std::f64::consts::PI).sqrt() * a * (-0.5 * a * a).exp()
}

#[cfg(test)]
mod tests {
    use super::super::ensemble::{simulate_ensemble, EnsembleSettings, StartSpec};
    use super::*;

    fn brownian(paths: usize, dt: f64) -> PathEnsemble {
        simulate_ensemble(
            &DriftSpec::zero(3, 1.0),
            &StartSpec::point(vec![0.0; 3]),
            0.0,
            1.0,
            &EnsembleSettings::new(dt, paths, 21).with_stride((1.0 / dt).round() as usize),
        )
        .unwrap()
    }

    #[test]
    fn norms_match_closed_forms() {
        let ind = TestFn::indicator_ball(1.0);
        let vol = 4.0 * std::f64::consts::PI / 3.0;
        assert!((ind.lmu_norm(3.0, 3, 0.0, 2.0) - (2.0 * vol).powf(1.0 / 3.0)).abs() < 1e-12);
        let g = TestFn::Gaussian {
            width: 0.3,
            amplitude: 2.0,
            center: vec![],
            window: Some((0.0, 0.5)),
        };
        let exact =
            2.0 * (0.5 * (2.0 * std::f64::consts::PI * 0.09 / 3.0f64).powf(1.5)).powf(1.0 / 3.0);
        assert!((g.lmu_norm(3.0, 3, 0.0, 1.0) - exact).abs() < 1e-10 * exact);
        let one = DriftSpec::constant(vec![1.0, 0.0, 0.0], 4.0);
        let c = composite_norm(&one, &ind, 4.0, 0.0, 1.0).unwrap();
        assert!((c - vol.powf(0.25)).abs() < 1e-3, "{c}");
    }

    #[test]
    fn brownian_occupation_matches_oracle() {
        let dt = 0.01;
        let ens = brownian(4000, dt);
        let rep = krylov_functional(&ens, &TestFn::indicator_ball(1.0), 3.0).unwrap();
        let oracle: f64 = (0..100).map(|k| if k == 0 { 1.0 } else { chi3_cdf(1.0 / (k as f64 * dt).sqrt()) } * dt).sum();
        assert!(
            (rep.estimate - oracle).abs() < 3.0 * rep.std_error,
            "{} vs {oracle} +- {}",
            rep.estimate,
            rep.std_error
        );
        let zero = krylov_functional(&ens, &TestFn::indicator_ball(1.0).scaled(0.0), 3.0).unwrap();
        assert_eq!(zero.estimate, 0.0);
        let two = krylov_functional(&ens, &TestFn::indicator_ball(1.0).scaled(2.0), 3.0).unwrap();
        assert_eq!(two.estimate, 2.0 * rep.estimate);
        assert!((two.ratio - rep.ratio).abs() < 1e-15 * rep.ratio);
        assert!(matches!(
            krylov_functional(&ens, &TestFn::indicator_ball(1.0), 2.5),
            Err(LabError::InvalidArgument(_))
        ));
    }

    #[test]
    fn g_functional_reduces_to_the_plain_one() {
        let ens = brownian(500, 0.02);
        let h = TestFn::indicator_ball(1.0);
        let one = DriftSpec::constant(vec![1.0, 0.0, 0.0], 4.0);
        let a = krylov_functional(&ens, &h, 3.0).unwrap();
        let b = krylov_g_functional(&ens, &one, &h, 4.0, 0.01).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert!(matches!(
            krylov_g_functional(&ens, &one, &h, 4.0, 0.2),
            Err(LabError::InfeasibleExponent(_))
        ));
        assert!(matches!(
            krylov_g_functional(&ens, &one, &h, 12.0, 0.01),
            Err(LabError::InvalidArgument(_))
        ));
    }
}
