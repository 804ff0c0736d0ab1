//! The bump kernel `exp(-1/(1-|z|^2))` on the unit ball of `R^{1+d}`, its
//! time-marginal profile, and discrete convolution rules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::quadrature::{sphere_area, GaussRule};

use crate::MAX_DIM;

pub const SPATIAL_NODES: usize = 12;
pub const SPACE_TIME_NODES: usize = 8;

const PROFILE_POINTS: usize = 4096;

/// `exp(-1/(1-s))` for `s < 1`, else zero.
#[inline]
pub fn bump(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s)).exp()
    }
}

/// Tabulated time-marginal `k(rho) = int bump(rho^2 + tau^2) dtau` and its
/// derivative, Hermite-interpolated.
#[derive(Debug)]
pub struct MarginalProfile {
    step: f64,
    value: Vec<f64>,
    slope: Vec<f64>,
}

impl MarginalProfile {
    fn build() -> Self {
        let g = GaussRule::new(64);
        let n = PROFILE_POINTS;
        let step = 1.0 / n as f64;
        let mut value = vec![0.0; n + 1];
        let mut slope = vec![0.0; n + 1];
        for i in 0..n {
            let rho = i as f64 * step;
            let a = (1.0 - rho * rho).sqrt();
            value[i] = 2.0 * g.integrate(0.0, a, |tau| bump(rho * rho + tau * tau));
            slope[i] = 2.0
                * g.integrate(0.0, a, |tau| {
                    let q = 1.0 - rho * rho - tau * tau;
                    if q <= 0.0 {
                        0.0
                    } else {
                        (-1.0 / q).exp() * (-2.0 * rho / (q * q))
                    }
                });
        }
        Self { step, value, slope }
    }

    /// Returns `(k(rho), k'(rho))`.
    #[inline]
    pub fn eval(&self, rho: f64) -> (f64, f64) {
        if rho >= 1.0 {
            return (0.0, 0.0);
        }
        let u = rho / self.step;
        let i = (u as usize).min(self.value.len() - 2);
        let s = u - i as f64;
        let h = self.step;
        let (p0, p1) = (self.value[i], self.value[i + 1]);
        let (m0, m1) = (self.slope[i] * h, self.slope[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1;
        let dv = ((6.0 * s2 - 6.0 * s) * p0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * p1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        (v, dv)
    }

    /// Spatial mass `int_{R^d} k(|y|) dy`.
    pub fn mass(&self, d: usize) -> f64 {
        let g = GaussRule::new(200);
        sphere_area(d) * g.integrate(0.0, 1.0, |r| r.powi(d as i32 - 1) * self.eval(r).0)
    }
}

pub fn marginal_profile() -> &'static MarginalProfile {
    static PROFILE: OnceLock<MarginalProfile> = OnceLock::new();
    PROFILE.get_or_init(MarginalProfile::build)
}

/// Discrete convolution rule on the unit ball: `E_eps f(x) ~ sum_k W_k
/// f(t - eps tau_k, x - eps y_k)`, with gradient weights `G_{k,j}` such that
/// `d_j E_eps f(x) ~ (1/eps) sum_k G_{k,j} f(...)`.
#[derive(Debug)]
pub struct KernelRule {
    pub dimension: usize,
    pub space_time: bool,
    /// Flattened nodes: `(tau, y)` when `space_time`, else `y`.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub grad_weights: Vec<f64>,
}

impl KernelRule {
    pub fn stride(&self) -> usize {
        self.dimension + usize::from(self.space_time)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn build(d: usize, space_time: bool, n: usize) -> Self {
        let g = GaussRule::new(n);
        let dim = d + usize::from(space_time);
        let profile = marginal_profile();
        let mut nodes = vec![];
        let mut weights = vec![];
        let mut grad_weights = vec![];
        crate::quadrature::for_each_index(dim, n, |idx| {
            let mut z = [0.0; MAX_DIM + 1];
            let mut w = 1.0;
            for (k, &i) in idx.iter().enumerate() {
                z[k] = g.nodes[i];
                w *= g.weights[i];
            }
            let s: f64 = z[..dim].iter().map(|v| v * v).sum();
            if s >= 1.0 {
                return;
            }
            let off = usize::from(space_time);
            let (val, grad_factor) = if space_time {
                let e = bump(s);
                (e, -2.0 * e / ((1.0 - s) * (1.0 - s)))
            } else {
                let rho = s.sqrt();
                let (k, dk) = profile.eval(rho);
                (k, if rho > 0.0 { dk / rho } else { 0.0 })
            };
            if val <= 0.0 {
                return;
            }
            nodes.extend_from_slice(&z[..dim]);
            weights.push(w * val);
            for j in 0..d {
                grad_weights.push(w * grad_factor * z[off + j]);
            }
        });
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let stride = dim;
        let off = usize::from(space_time);
        let mut c = 0.0;
        for k in 0..weights.len() {
            c -= grad_weights[k * d] * nodes[k * stride + off];
        }
        for gw in &mut grad_weights {
            *gw /= c;
        }
        Self {
            dimension: d,
            space_time,
            nodes,
            weights,
            grad_weights,
        }
    }
}

/// Cached rule for `(d, space_time, nodes per axis)`.
pub fn kernel_rule(d: usize, space_time: bool, n: usize) -> Arc<KernelRule> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool, usize), Arc<KernelRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache
        .lock()
        .expect("kernel cache poisoned")
        .get(&(d, space_time, n))
    {
        return rule.clone();
    }
    let rule = Arc::new(KernelRule::build(d, space_time, n));
    cache
        .lock()
        .expect("kernel cache poisoned")
        .entry((d, space_time, n))
        .or_insert(rule)
        .clone()
}

/// Shape of a radially symmetric field: `psi(|x|) x/|x|` or `u g(|x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadialShape {
    Vector,
    FixedDirection,
}

/// Mollified profile and its derivative at radius `r` for a radially
/// symmetric inner field with profile `psi0`, by a polar quadrature centred
/// on the origin (`features` are the radii where `psi0` is non-smooth).
pub fn radial_convolve(
    d: usize,
    eps: f64,
    r: f64,
    shape: RadialShape,
    features: &[f64],
    gauss: &GaussRule,
    psi0: &dyn Fn(f64) -> f64,
) -> (f64, f64) {
    let profile = marginal_profile();
    let lo = (r - eps).max(0.0);
    let hi = r + eps;
    let mut breaks: Vec<f64> = features
        .iter()
        .copied()
        .filter(|f| *f > lo && *f < hi)
        .collect();
    let flip = (eps - r).abs();
    if flip > lo && flip < hi {
        breaks.push(flip);
    }
    breaks.push(lo);
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15 * hi);
    // the discrete kernel mass (same nodes, unit profile) normalizes the result
    let mut val = 0.0;
    let mut der = 0.0;
    let mut mass = 0.0;
    let mut dmass = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xr, wr) in gauss.nodes.iter().zip(&gauss.weights) {
            let rho = mid + half * xr;
            let theta_max = if r == 0.0 || rho == 0.0 {
                std::f64::consts::PI
            } else {
                let u0 = (r * r + rho * rho - eps * eps) / (2.0 * r * rho);
                if u0 >= 1.0 {
                    continue;
                }
                u0.max(-1.0).acos()
            };
            let f = psi0(rho);
            let th = 0.5 * theta_max;
            let (mut iv, mut id, mut im, mut imd) = (0.0, 0.0, 0.0, 0.0);
            for (xt, wt) in gauss.nodes.iter().zip(&gauss.weights) {
                let theta = th + th * xt;
                let (st, ct) = theta.sin_cos();
                let s2 = (r * r + rho * rho - 2.0 * r * rho * ct).max(0.0);
                let s = s2.sqrt();
                let (k, dk) = profile.eval(s / eps);
                let base = wt * st.powi(d as i32 - 2);
                let ang = base
                    * if shape == RadialShape::Vector {
                        ct
                    } else {
                        1.0
                    };
                let dks = if s > 0.0 {
                    dk / eps * (r - rho * ct) / s
                } else {
                    0.0
                };
                iv += ang * k;
                id += ang * dks;
                im += base * k;
                imd += base * dks;
            }
            let radial = wr * half * rho.powi(d as i32 - 1) * th;
            val += radial * f * iv;
            der += radial * f * id;
            mass += radial * im;
            dmass += radial * imd;
        }
    }
    if mass <= 0.0 {
        return (0.0, 0.0);
    }
    (val / mass, der / mass - val * dmass / (mass * mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_reproduces_constants_and_linear_fields() {
        for &st in &[false, true] {
            let rule = kernel_rule(3, st, if st { SPACE_TIME_NODES } else { SPATIAL_NODES });
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 1.0).abs() < 1e-14);
            let stride = rule.stride();
            let off = usize::from(st);
            for i in 0..3 {
                let first: f64 = (0..rule.len())
                    .map(|k| rule.weights[k] * rule.nodes[k * stride + off + i])
                    .sum();
                assert!(first.abs() < 1e-14);
                for j in 0..3 {
                    let m: f64 = -(0..rule.len())
                        .map(|k| rule.grad_weights[k * 3 + j] * rule.nodes[k * stride + off + i])
                        .sum::<f64>();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((m - want).abs() < 1e-12, "{st} {i} {j} {m}");
                }
            }
        }
    }

    #[test]
    fn profile_matches_direct_integral() {
        let p = marginal_profile();
        let g = GaussRule::new(200);
        for &rho in &[0.0, 0.13, 0.5, 0.77, 0.95] {
            let a: f64 = 1.0 - rho * rho;
            let direct = g.integrate(-a.sqrt(), a.sqrt(), |t| bump(rho * rho + t * t));
            assert!(
                (p.eval(rho).0 - direct).abs() < 1e-8 * direct.max(1e-30),
                "{rho} {} {direct}",
                p.eval(rho).0
            );
        }
        let h = 1e-6;
        let fd = (p.eval(0.4 + h).0 - p.eval(0.4 - h).0) / (2.0 * h);
        assert!((fd - p.eval(0.4).1).abs() < 1e-7);
    }

    #[test]
    fn radial_convolution_of_constant_direction_is_identity() {
        let g = GaussRule::new(32);
        let (v, dv) = radial_convolve(3, 0.1, 0.5, RadialShape::FixedDirection, &[], &g, &|_| 2.0);
        assert!((v - 2.0).abs() < 1e-9, "{v}");
        assert!(dv.abs() < 1e-8);
        // linear radial field x is reproduced exactly by a symmetric kernel
        let (v, dv) = radial_convolve(3, 0.1, 0.5, RadialShape::Vector, &[], &g, &|rho| rho);
        assert!((v - 0.5).abs() < 1e-9, "{v}");
        assert!((dv - 1.0).abs() < 1e-7, "{dv}");
        let (v, _) = radial_convolve(3, 0.1, 0.05, RadialShape::Vector, &[], &g, &|rho| rho);
        assert!((v - 0.05).abs() < 1e-9, "{v}");
    }
}
