//! Quadrature rules: Gauss-Legendre, graded radial panels, sphere and ball
//! product rules, composite tensor rules on boxes.

use std::f64::consts::PI;

use crate::MAX_DIM;

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Panelled rule for integrals over `[0, r_max]` in the radial variable.
///
/// The first panel is graded (`r = b v^p`) so that integrable power
/// singularities at the origin are resolved; panels spanning more than a
/// decade use a logarithmic substitution; the rest are plain Gauss-Legendre.
#[derive(Debug, Clone)]
pub struct RadialRule {
    rule: GaussRule,
    grading: f64,
}

pub const RADIAL_NODES: usize = 256;

impl Default for RadialRule {
    fn default() -> Self {
        Self::new(RADIAL_NODES)
    }
}

impl RadialRule {
    pub fn new(nodes_per_panel: usize) -> Self {
        Self {
            rule: GaussRule::new(nodes_per_panel),
            grading: 10.0,
        }
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.rule.len()
    }

    /// Panel boundaries from `0` to `r_max` through the given breakpoints.
    pub fn panels(r_max: f64, breakpoints: &[f64]) -> Vec<f64> {
        let mut pts: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|b| b.is_finite() && *b > 0.0 && *b < r_max)
            .collect();
        pts.push(0.0);
        pts.push(r_max);
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * r_max.max(1e-300));
        pts
    }

    /// Nodes and weights `(r, w)` of the rule on `[0, r_max]`.
    pub fn nodes(&self, r_max: f64, breakpoints: &[f64]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        if r_max <= 0.0 {
            return out;
        }
        let pts = Self::panels(r_max, breakpoints);
        let g = &self.rule;
        for (k, win) in pts.windows(2).enumerate() {
            let (a, b) = (win[0], win[1]);
            if b <= a {
                continue;
            }
            for (x, w) in g.nodes.iter().zip(&g.weights) {
                let v = 0.5 * (x + 1.0);
                let w = 0.5 * w;
                if k == 0 {
                    if v <= 0.0 {
                        continue;
                    }
                    let p = self.grading;
                    out.push((b * v.powf(p), w * b * p * v.powf(p - 1.0)));
                } else if b / a > 10.0 {
                    let lr = (b / a).ln();
                    let r = a * (v * lr).exp();
                    out.push((r, w * r * lr));
                } else {
                    out.push((a + (b - a) * v, w * (b - a)));
                }
            }
        }
        out
    }

    /// Integrates `f(r) dr` over `[0, r_max]`.
    pub fn integrate(&self, r_max: f64, breakpoints: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes(r_max, breakpoints)
            .iter()
            .map(|&(r, w)| w * f(r))
            .sum()
    }
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / statrs::function::gamma::gamma(h)
}

/// Volume of the unit ball in `R^d`.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Product rule on the unit sphere `S^{d-1}` (hyperspherical angles).
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dim: usize,
    /// Flattened unit directions, `dim` entries each.
    pub directions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// `n_polar` Gauss nodes per polar angle, `n_azimuth` equispaced azimuths.
    pub fn new(dim: usize, n_polar: usize, n_azimuth: usize) -> Self {
        assert!((2..=MAX_DIM).contains(&dim));
        let g = GaussRule::new(n_polar);
        // polar factors: list of (cos, sin, weight) for each of the d-2 angles
        let mut dirs: Vec<Vec<f64>> = vec![Vec::new()];
        let mut wts: Vec<f64> = vec![1.0];
        // Build recursively: direction = (cos t1, sin t1 * rest)
        for k in 1..=dim.saturating_sub(2) {
            let j = dim - 1 - k; // weight sin^j
            let mut nd = Vec::new();
            let mut nw = Vec::new();
            for (dir, w) in dirs.iter().zip(&wts) {
                for (x, gw) in g.nodes.iter().zip(&g.weights) {
                    let theta = 0.5 * PI * (1.0 + x);
                    let (s, u) = theta.sin_cos();
                    let wt = 0.5 * PI * gw * s.powi(j as i32);
                    let mut v = dir.clone();
                    v.push(u);
                    // remaining coordinates get multiplied by s later
                    v.push(s);
                    nd.push(v);
                    nw.push(w * wt);
                }
            }
            dirs = nd;
            wts = nw;
        }
        let mut directions = Vec::with_capacity(dirs.len() * n_azimuth * dim);
        let mut weights = Vec::with_capacity(dirs.len() * n_azimuth);
        let dphi = 2.0 * PI / n_azimuth as f64;
        for (dir, w) in dirs.iter().zip(&wts) {
            for a in 0..n_azimuth {
                let phi = (a as f64 + 0.5) * dphi;
                let mut x = [0.0; MAX_DIM];
                let mut scale = 1.0;
                let mut idx = 0;
                let mut it = dir.chunks(2);
                for pair in &mut it {
                    x[idx] = scale * pair[0];
                    scale *= pair[1];
                    idx += 1;
                }
                x[idx] = scale * phi.cos();
                x[idx + 1] = scale * phi.sin();
                directions.extend_from_slice(&x[..dim]);
                weights.push(w * dphi);
            }
        }
        // normalize to the exact area
        let total: f64 = weights.iter().sum();
        let area = sphere_area(dim);
        for w in &mut weights {
            *w *= area / total;
        }
        Self {
            dim,
            directions,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.directions[i * self.dim..(i + 1) * self.dim]
    }
}

/// Integrates `f(x)` over the ball `B_radius(center)` using radial panels
/// (breakpoints are radii measured from `center`) times a sphere rule.
pub fn integrate_ball(
    radial: &RadialRule,
    sphere: &SphereRule,
    center: &[f64],
    radius: f64,
    breakpoints: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let d = sphere.dim;
    let mut x = [0.0; MAX_DIM];
    radial.integrate(radius, breakpoints, |r| {
        let mut acc = 0.0;
        for i in 0..sphere.len() {
            let dir = sphere.direction(i);
            for k in 0..d {
                x[k] = center[k] + r * dir[k];
            }
            acc += sphere.weights[i] * f(&x[..d]);
        }
        acc * r.powi(d as i32 - 1)
    })
}

/// Nodes `(x, w)` of the ball rule used by [`integrate_ball`].
pub fn ball_nodes(
    radial: &RadialRule,
    sphere: &SphereRule,
    center: &[f64],
    radius: f64,
    breakpoints: &[f64],
) -> Vec<([f64; MAX_DIM], f64)> {
    let d = sphere.dim;
    let mut out = Vec::new();
    for (r, wr) in radial.nodes(radius, breakpoints) {
        let shell = wr * r.powi(d as i32 - 1);
        for i in 0..sphere.len() {
            let dir = sphere.direction(i);
            let mut x = [0.0; MAX_DIM];
            for k in 0..d {
                x[k] = center[k] + r * dir[k];
            }
            out.push((x, shell * sphere.weights[i]));
        }
    }
    out
}

/// Composite Gauss-Legendre tensor rule over a box, `panels` subintervals
/// per axis with `nodes` points each.
#[derive(Debug, Clone)]
pub struct TensorRule {
    rule: GaussRule,
    pub panels: usize,
}

impl TensorRule {
    pub fn new(nodes: usize, panels: usize) -> Self {
        Self {
            rule: GaussRule::new(nodes),
            panels: panels.max(1),
        }
    }

    pub fn points_per_axis(&self) -> usize {
        self.rule.len() * self.panels
    }

    /// One-dimensional node/weight list on `[a, b]`.
    pub fn axis(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(self.points_per_axis());
        let mut ws = Vec::with_capacity(self.points_per_axis());
        let h = (b - a) / self.panels as f64;
        for p in 0..self.panels {
            let lo = a + p as f64 * h;
            for (x, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                xs.push(lo + 0.5 * h * (x + 1.0));
                ws.push(0.5 * h * w);
            }
        }
        (xs, ws)
    }

    /// Integrates `f` over `prod [lo_k, hi_k]`.
    pub fn integrate(&self, lo: &[f64], hi: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let d = lo.len();
        let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d).map(|k| self.axis(lo[k], hi[k])).collect();
        let n = self.points_per_axis();
        let mut idx = [0usize; MAX_DIM];
        let mut x = [0.0; MAX_DIM];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for k in 0..d {
                x[k] = axes[k].0[idx[k]];
                w *= axes[k].1[idx[k]];
            }
            total += w * f(&x[..d]);
            let mut k = 0;
            loop {
                if k == d {
                    return total;
                }
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// Iterates over all multi-indices of a `d`-dimensional grid with `n` points per axis.
pub fn for_each_index(d: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = [0usize; MAX_DIM];
    if n == 0 {
        return;
    }
    loop {
        f(&idx[..d]);
        let mut k = 0;
        loop {
            if k == d {
                return;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_is_exact_for_polynomials() {
        let g = GaussRule::new(8);
        let v = g.integrate(-1.0, 2.0, |x| x.powi(15) + 3.0 * x * x);
        let exact = (2f64.powi(16) - 1.0) / 16.0 + (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-10 * exact.abs());
        let big = GaussRule::new(256);
        let s: f64 = big.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn radial_rule_handles_power_singularity() {
        let r = RadialRule::default();
        // int_0^1 r^{-0.9} dr = 10
        let v = r.integrate(1.0, &[], |x| x.powf(-0.9));
        assert!((v - 10.0).abs() < 1e-9, "{v}");
        // log panel: int_{1e-6}^{1} 1/r dr with a breakpoint
        let v = r.integrate(1.0, &[1e-6], |x| if x > 1e-6 { 1.0 / x } else { 0.0 });
        assert!((v - 6.0 * 10f64.ln()).abs() < 1e-9, "{v}");
    }

    #[test]
    fn sphere_rule_area_and_moments() {
        for d in 3..=5 {
            let s = SphereRule::new(d, 12, 24);
            let a: f64 = s.weights.iter().sum();
            assert!((a - sphere_area(d)).abs() < 1e-12);
            // second moment of x_1: area / d
            let m2: f64 = (0..s.len())
                .map(|i| s.weights[i] * s.direction(i)[0].powi(2))
                .sum();
            assert!(
                (m2 - sphere_area(d) / d as f64).abs() < 1e-9 * m2,
                "d={d} {m2}"
            );
            let m2b: f64 = (0..s.len())
                .map(|i| s.weights[i] * s.direction(i)[d - 1].powi(2))
                .sum();
            assert!((m2b - sphere_area(d) / d as f64).abs() < 1e-6 * m2b);
        }
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn ball_volume_by_quadrature() {
        let r = RadialRule::new(32);
        let s = SphereRule::new(3, 8, 16);
        let v = integrate_ball(&r, &s, &[0.3, -0.2, 0.1], 2.0, &[], |_| 1.0);
        assert!((v - 4.0 / 3.0 * PI * 8.0).abs() < 1e-10);
    }

    #[test]
    fn tensor_rule_gaussian() {
        let t = TensorRule::new(10, 8);
        let v = t.integrate(&[-9.0; 3], &[9.0; 3], |x| {
            (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp()
        });
        assert!((v - (2.0 * PI).powf(1.5)).abs() < 1e-9, "{v}");
    }
}
