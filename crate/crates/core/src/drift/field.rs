use std::sync::Arc;

use rayon::prelude::*;

use super::spec::{
    cutoff, cutoff_derivative, retime, DriftKind, DriftSpec, Symmetry, TimeEnvelope, TimePiece,
};
use crate::error::{LabError, Result};
use crate::mollifier::kernel::{
    kernel_rule, radial_convolve, KernelRule, RadialShape, SPACE_TIME_NODES, SPATIAL_NODES,
};
use crate::quadrature::GaussRule;
use crate::MAX_DIM;

const RADIAL_TABLE_NODES: usize = 24;

/// A [`DriftSpec`] prepared for repeated evaluation (mollification caches built).
#[derive(Debug, Clone)]
pub struct Drift {
    spec: DriftSpec,
    node: Arc<Node>,
}

#[derive(Debug)]
enum Atom {
    Zero,
    Hardy(f64),
    Linear(Vec<f64>),
    Constant(Vec<f64>),
    Gaussian(Vec<f64>, f64),
    Indicator(f64, Vec<f64>),
    Grid {
        half_width: f64,
        n: usize,
        values: Vec<f64>,
        fd_step: f64,
    },
}

#[derive(Debug)]
enum Node {
    Atomic {
        atom: Atom,
        radius: f64,
        env: TimeEnvelope,
    },
    Scaled {
        lambda: f64,
        inner: Box<Node>,
        env: TimeEnvelope,
    },
    Sum {
        terms: Vec<Node>,
        env: TimeEnvelope,
    },
    Truncated {
        m: f64,
        inner: Box<Node>,
        env: TimeEnvelope,
    },
    Dilated {
        lambda: f64,
        inner: Box<Node>,
        env: TimeEnvelope,
    },
    Projected {
        index: usize,
        inner: Box<Node>,
        env: TimeEnvelope,
    },
    Retimed {
        pieces: Vec<TimePiece>,
        inner: Box<Node>,
        env: TimeEnvelope,
    },
    Mollified {
        c_m: f64,
        eps: f64,
        support: f64,
        env: TimeEnvelope,
        body: Mollification,
    },
}

#[derive(Debug)]
enum Mollification {
    /// Radially symmetric, time-constant inner field: one-dimensional table.
    Radial(RadialTable),
    /// Time-constant inner field: spatial quadrature with the time-marginal kernel.
    Spatial {
        inner: Box<Node>,
        rule: Arc<KernelRule>,
    },
    /// Space-time quadrature with the full kernel.
    SpaceTime {
        inner: Box<Node>,
        rule: Arc<KernelRule>,
    },
}

/// Profile `psi(r)` and `psi'(r)` of a mollified radial field on a node set,
/// interpolated by cubic Hermite polynomials.
#[derive(Debug)]
struct RadialTable {
    symmetry: Symmetry,
    r: Vec<f64>,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
}

impl RadialTable {
    fn locate(&self, r: f64) -> Option<usize> {
        let last = *self.r.last()?;
        if r >= last {
            return None;
        }
        let k = self.r.partition_point(|&x| x <= r);
        Some(k.saturating_sub(1).min(self.r.len() - 2))
    }

    /// Returns `(psi, psi')` at `r`.
    fn profile(&self, r: f64) -> (f64, f64) {
        let Some(k) = self.locate(r) else {
            return (0.0, 0.0);
        };
        let (r0, r1) = (self.r[k], self.r[k + 1]);
        let h = r1 - r0;
        let s = (r - r0) / h;
        let (p0, p1, m0, m1) = (
            self.psi[k],
            self.psi[k + 1],
            self.dpsi[k] * h,
            self.dpsi[k + 1] * h,
        );
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

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let r = norm(x);
        let (psi, _) = self.profile(r);
        match self.symmetry {
            Symmetry::FixedDirection(u) => {
                for i in 0..d {
                    out[i] = u[i] * psi;
                }
            }
            _ => {
                if r > 0.0 {
                    for i in 0..d {
                        out[i] = psi * x[i] / r;
                    }
                } else {
                    out[..d].fill(0.0);
                }
            }
        }
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let r = norm(x);
        let (psi, dpsi) = self.profile(r);
        match self.symmetry {
            Symmetry::FixedDirection(u) => {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = if r > 0.0 { u[i] * dpsi * x[j] / r } else { 0.0 };
                    }
                }
            }
            _ => {
                let tiny = 1e-12 * self.r.last().copied().unwrap_or(1.0);
                if r <= tiny {
                    let (_, d0) = self.profile(0.0);
                    for i in 0..d {
                        for j in 0..d {
                            out[i * d + j] = if i == j { d0 } else { 0.0 };
                        }
                    }
                } else {
                    let q = psi / r;
                    for i in 0..d {
                        for j in 0..d {
                            let xx = x[i] * x[j] / (r * r);
                            out[i * d + j] = dpsi * xx + q * (if i == j { 1.0 } else { 0.0 } - xx);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Drift {
    pub fn new(spec: &DriftSpec) -> Result<Self> {
        spec.validate()?;
        let node = build(spec)?;
        Ok(Self {
            spec: spec.clone(),
            node: Arc::new(node),
        })
    }

    pub fn spec(&self) -> &DriftSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn support_radius(&self) -> f64 {
        self.spec.support_radius()
    }

    /// Writes `b(t, x)` into `out` (length `d`).
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        eval_node(&self.node, t, x, out);
    }

    /// Writes the Jacobian `(d_j b_i)` row-major into `out` (length `d*d`).
    pub fn grad_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        grad_node(&self.node, t, x, out)
    }

    /// Convenience: `|b(t, x)|`.
    pub fn magnitude(&self, t: f64, x: &[f64]) -> f64 {
        let mut out = [0.0; MAX_DIM];
        self.eval_into(t, x, &mut out[..x.len()]);
        norm(&out[..x.len()])
    }

    /// Signed radial profile `u . b(t, r e_1)` for radially symmetric fields.
    pub fn radial_profile(&self, t: f64, r: f64) -> f64 {
        let d = self.dimension();
        let u = self.spec.symmetry().reference(d);
        let mut x = [0.0; MAX_DIM];
        x[0] = r;
        let mut out = [0.0; MAX_DIM];
        self.eval_into(t, &x[..d], &mut out[..d]);
        (0..d).map(|k| u[k] * out[k]).sum()
    }

    /// Radii in `(0, support)` where `|b(t, r e_1)|` crosses `level`
    /// (log-spaced scan refined by bisection).
    pub fn radial_crossings(&self, t: f64, level: f64) -> Vec<f64> {
        let d = self.dimension();
        let rmax = self.support_radius();
        let mag = |r: f64| {
            let mut x = [0.0; MAX_DIM];
            x[0] = r;
            self.magnitude(t, &x[..d]) - level
        };
        let n = 4000;
        let lo = rmax * 1e-9;
        let ratio = (rmax / lo).powf(1.0 / n as f64);
        let mut out = vec![];
        let mut r0 = lo;
        let mut f0 = mag(r0);
        for _ in 0..n {
            let r1 = (r0 * ratio).min(rmax);
            let f1 = mag(r1);
            if (f0 > 0.0) != (f1 > 0.0) {
                let (mut a, mut b) = (r0, r1);
                let up = f0 > 0.0;
                for _ in 0..80 {
                    let c = 0.5 * (a + b);
                    if (mag(c) > 0.0) == up {
                        a = c;
                    } else {
                        b = c;
                    }
                }
                out.push(0.5 * (a + b));
            }
            r0 = r1;
            f0 = f1;
        }
        out
    }

    /// Upper bound of `|b|` over `[t0, t1] x R^d` from the structure of the
    /// spec (exact for cut-off atoms, `c_m m` bound for mollified truncations).
    pub fn sup_bound(&self, t0: f64, t1: f64) -> f64 {
        sup_node(&self.node, t0, t1)
    }
}

fn build(spec: &DriftSpec) -> Result<Node> {
    let env = spec.time_envelope.clone();
    let d = spec.dimension;
    let flat = |a: &Vec<Vec<f64>>| {
        a.iter()
            .flat_map(|row| row.iter().copied())
            .collect::<Vec<f64>>()
    };
    Ok(match &spec.kind {
        DriftKind::Zero => Node::Atomic {
            atom: Atom::Zero,
            radius: spec.cutoff_radius,
            env,
        },
        DriftKind::HardyAttractor { c } => Node::Atomic {
            atom: Atom::Hardy(*c),
            radius: spec.cutoff_radius,
            env,
        },
        DriftKind::Linear { a } => Node::Atomic {
            atom: Atom::Linear(flat(a)),
            radius: spec.cutoff_radius,
            env,
        },
        DriftKind::Constant { v } => Node::Atomic {
            atom: Atom::Constant(v.clone()),
            radius: spec.cutoff_radius,
            env,
        },
        DriftKind::Gaussian { amplitude, width } => Node::Atomic {
            atom: Atom::Gaussian(amplitude.clone(), *width),
            radius: spec.cutoff_radius,
            env,
        },
        DriftKind::IndicatorBall { radius, v } => Node::Atomic {
            atom: Atom::Indicator(*radius, v.clone()),
            radius: spec.cutoff_radius,
            env,
        },
        DriftKind::SampledGrid {
            half_width,
            points_per_axis,
            values,
            fd_step,
        } => Node::Atomic {
            atom: Atom::Grid {
                half_width: *half_width,
                n: *points_per_axis,
                values: values.clone(),
                fd_step: *fd_step,
            },
            radius: spec.cutoff_radius,
            env,
        },
        DriftKind::Scaled { lambda, inner } => Node::Scaled {
            lambda: *lambda,
            inner: Box::new(build(inner)?),
            env,
        },
        DriftKind::Sum { terms } => Node::Sum {
            terms: terms.iter().map(build).collect::<Result<_>>()?,
            env,
        },
        DriftKind::Truncated { m, inner } => Node::Truncated {
            m: *m,
            inner: Box::new(build(inner)?),
            env,
        },
        DriftKind::Dilated { lambda, inner } => Node::Dilated {
            lambda: *lambda,
            inner: Box::new(build(inner)?),
            env,
        },
        DriftKind::Projected { index, inner } => Node::Projected {
            index: *index,
            inner: Box::new(build(inner)?),
            env,
        },
        DriftKind::Retimed { pieces, inner } => Node::Retimed {
            pieces: pieces.clone(),
            inner: Box::new(build(inner)?),
            env,
        },
        DriftKind::Mollified { inner, m, eps, c_m } => {
            let effective = match m {
                Some(level) => DriftSpec::truncated((**inner).clone(), *level),
                None => (**inner).clone(),
            };
            let support = effective.support_radius() + eps;
            let inner_node = build(&effective)?;
            let sym = effective.symmetry();
            let body = if effective.is_time_constant() {
                if sym.is_radial() {
                    Mollification::Radial(build_table(&effective, &inner_node, *eps, sym))
                } else {
                    Mollification::Spatial {
                        inner: Box::new(inner_node),
                        rule: kernel_rule(d, false, SPATIAL_NODES),
                    }
                }
            } else {
                Mollification::SpaceTime {
                    inner: Box::new(inner_node),
                    rule: kernel_rule(d, true, SPACE_TIME_NODES),
                }
            };
            Node::Mollified {
                c_m: *c_m,
                eps: *eps,
                support,
                env,
                body,
            }
        }
    })
}

/// Table nodes: dense near the origin and around each feature radius,
/// relative spacing elsewhere.
fn table_nodes(features: &[f64], eps: f64, r_max: f64) -> Vec<f64> {
    let mut r = vec![0.0];
    let mut x = 0.0;
    while x < r_max {
        let step = (eps / 4.0).max(x.min(r_max) / 200.0).min(r_max / 400.0);
        x += step.max(r_max * 1e-7);
        r.push(x.min(r_max));
    }
    for &f in features {
        for k in -24..=24 {
            let v = f + k as f64 * eps / 8.0;
            if v > 0.0 && v < r_max {
                r.push(v);
            }
        }
    }
    r.sort_by(f64::total_cmp);
    r.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * r_max);
    r
}

fn build_table(effective: &DriftSpec, inner: &Node, eps: f64, symmetry: Symmetry) -> RadialTable {
    let d = effective.dimension;
    let r_max = effective.support_radius() + eps;
    let features = effective.radial_features();
    let nodes = table_nodes(&features, eps, r_max);
    let u = symmetry.reference(d);
    let shape = match symmetry {
        Symmetry::FixedDirection(_) => RadialShape::FixedDirection,
        _ => RadialShape::Vector,
    };
    let profile = |rho: f64| {
        let mut x = [0.0; MAX_DIM];
        x[0] = rho;
        let mut v = [0.0; MAX_DIM];
        eval_node(inner, 0.0, &x[..d], &mut v[..d]);
        (0..d).map(|k| u[k] * v[k]).sum::<f64>()
    };
    let gauss = GaussRule::new(RADIAL_TABLE_NODES);
    let vals: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|&r| radial_convolve(d, eps, r, shape, &features, &gauss, &profile))
        .collect();
    let mut psi: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let dpsi: Vec<f64> = vals.iter().map(|v| v.1).collect();
    if shape == RadialShape::Vector {
        psi[0] = 0.0;
    }
    if let Some(last) = psi.last_mut() {
        *last = 0.0;
    }
    RadialTable {
        symmetry,
        r: nodes,
        psi,
        dpsi,
    }
}

/// `sum_k W_k inner(t, x - eps y_k)` and optionally the spatial Jacobian
/// through the kernel-gradient weights.
fn spatial_convolve(
    inner: &Node,
    rule: &KernelRule,
    eps: f64,
    t: f64,
    x: &[f64],
    out: &mut [f64],
    grad: Option<&mut [f64]>,
) {
    let d = x.len();
    out[..d].fill(0.0);
    let mut tmp = [0.0; MAX_DIM];
    let mut y = [0.0; MAX_DIM];
    let stride = rule.stride();
    let mut gacc = [0.0; MAX_DIM * MAX_DIM];
    let want_grad = grad.is_some();
    for k in 0..rule.len() {
        let node = &rule.nodes[k * stride..(k + 1) * stride];
        let (tau, spatial) = if rule.space_time {
            (node[0], &node[1..])
        } else {
            (0.0, node)
        };
        for j in 0..d {
            y[j] = x[j] - eps * spatial[j];
        }
        eval_node(inner, t - eps * tau, &y[..d], &mut tmp[..d]);
        let w = rule.weights[k];
        for i in 0..d {
            out[i] += w * tmp[i];
        }
        if want_grad {
            let gw = &rule.grad_weights[k * d..(k + 1) * d];
            for i in 0..d {
                for j in 0..d {
                    gacc[i * d + j] += gw[j] * tmp[i];
                }
            }
        }
    }
    if let Some(g) = grad {
        for v in 0..d * d {
            g[v] = gacc[v] / eps;
        }
    }
}

fn eval_node(node: &Node, t: f64, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    match node {
        Node::Atomic { atom, radius, env } => {
            let r = norm(x);
            if r >= *radius {
                out[..d].fill(0.0);
                return;
            }
            let s = env.eval(t) * cutoff(r, *radius);
            match atom {
                Atom::Zero => out[..d].fill(0.0),
                Atom::Hardy(c) => {
                    if r == 0.0 {
                        out[..d].fill(0.0);
                    } else {
                        let f = -c * s / (r * r);
                        for i in 0..d {
                            out[i] = f * x[i];
                        }
                    }
                }
                Atom::Linear(a) => {
                    for i in 0..d {
                        out[i] = s * (0..d).map(|j| a[i * d + j] * x[j]).sum::<f64>();
                    }
                }
                Atom::Constant(v) => {
                    for i in 0..d {
                        out[i] = s * v[i];
                    }
                }
                Atom::Gaussian(a, w) => {
                    let e = s * (-r * r / (2.0 * w * w)).exp();
                    for i in 0..d {
                        out[i] = e * a[i];
                    }
                }
                Atom::Indicator(rho, v) => {
                    let f = if r < *rho { s } else { 0.0 };
                    for i in 0..d {
                        out[i] = f * v[i];
                    }
                }
                Atom::Grid {
                    half_width,
                    n,
                    values,
                    ..
                } => {
                    grid_interp(*half_width, *n, values, x, out);
                    for v in out[..d].iter_mut() {
                        *v *= s;
                    }
                }
            }
        }
        Node::Retimed { pieces, inner, env } => match retime(pieces, t) {
            Some(s) => {
                eval_node(inner, s, x, out);
                let e = env.eval(t);
                for v in out[..d].iter_mut() {
                    *v *= e;
                }
            }
            None => out[..d].fill(0.0),
        },
        Node::Scaled { lambda, inner, env } => {
            eval_node(inner, t, x, out);
            let s = lambda * env.eval(t);
            for v in out[..d].iter_mut() {
                *v *= s;
            }
        }
        Node::Sum { terms, env } => {
            let mut acc = [0.0; MAX_DIM];
            let mut tmp = [0.0; MAX_DIM];
            for term in terms {
                eval_node(term, t, x, &mut tmp[..d]);
                for i in 0..d {
                    acc[i] += tmp[i];
                }
            }
            let s = env.eval(t);
            for i in 0..d {
                out[i] = s * acc[i];
            }
        }
        Node::Truncated { m, inner, env } => {
            eval_node(inner, t, x, out);
            let keep = norm(&out[..d]) <= *m;
            let s = if keep { env.eval(t) } else { 0.0 };
            for v in out[..d].iter_mut() {
                *v *= s;
            }
        }
        Node::Dilated { lambda, inner, env } => {
            let mut y = [0.0; MAX_DIM];
            for i in 0..d {
                y[i] = lambda * x[i];
            }
            eval_node(inner, t, &y[..d], out);
            let s = lambda * env.eval(t);
            for v in out[..d].iter_mut() {
                *v *= s;
            }
        }
        Node::Projected { index, inner, env } => {
            let mut tmp = [0.0; MAX_DIM];
            eval_node(inner, t, x, &mut tmp[..d]);
            out[..d].fill(0.0);
            out[*index] = env.eval(t) * tmp[*index];
        }
        Node::Mollified {
            c_m,
            eps,
            support,
            env,
            body,
        } => {
            if norm(x) >= *support {
                out[..d].fill(0.0);
                return;
            }
            match body {
                Mollification::Radial(table) => table.eval(x, out),
                Mollification::Spatial { inner, rule }
                | Mollification::SpaceTime { inner, rule } => {
                    spatial_convolve(inner, rule, *eps, t, x, out, None)
                }
            }
            let s = c_m * env.eval(t);
            for v in out[..d].iter_mut() {
                *v *= s;
            }
        }
    }
}

fn grid_interp(half_width: f64, n: usize, values: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    out[..d].fill(0.0);
    let h = 2.0 * half_width / (n - 1) as f64;
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0; MAX_DIM];
    for k in 0..d {
        let u = (x[k] + half_width) / h;
        if !(0.0..=(n - 1) as f64).contains(&u) {
            return;
        }
        let i = (u.floor() as usize).min(n - 2);
        base[k] = i;
        frac[k] = u - i as f64;
    }
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut flat = 0usize;
        let mut stride = 1usize;
        for k in 0..d {
            let bit = (corner >> k) & 1;
            w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            flat += (base[k] + bit) * stride;
            stride *= n;
        }
        if w == 0.0 {
            continue;
        }
        for i in 0..d {
            out[i] += w * values[flat * d + i];
        }
    }
}

fn fd_grad(node: &Node, t: f64, x: &[f64], step: f64, out: &mut [f64]) {
    let d = x.len();
    let mut xp = [0.0; MAX_DIM];
    let mut fp = [0.0; MAX_DIM];
    let mut fm = [0.0; MAX_DIM];
    for j in 0..d {
        xp[..d].copy_from_slice(x);
        xp[j] = x[j] + step;
        eval_node(node, t, &xp[..d], &mut fp[..d]);
        xp[j] = x[j] - step;
        eval_node(node, t, &xp[..d], &mut fm[..d]);
        for i in 0..d {
            out[i * d + j] = (fp[i] - fm[i]) / (2.0 * step);
        }
    }
}

fn grad_node(node: &Node, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    let d = x.len();
    match node {
        Node::Atomic { atom, radius, env } => {
            let r = norm(x);
            if r >= *radius {
                out[..d * d].fill(0.0);
                return Ok(());
            }
            let e = env.eval(t);
            let chi = cutoff(r, *radius);
            let dchi = cutoff_derivative(r, *radius);
            // value without cutoff and its Jacobian
            let mut v = [0.0; MAX_DIM];
            let mut jac = [0.0; MAX_DIM * MAX_DIM];
            match atom {
                Atom::Zero => {}
                Atom::Hardy(c) => {
                    if r == 0.0 {
                        return Err(LabError::Domain(
                            "gradient of the Hardy attractor at the origin".into(),
                        ));
                    }
                    let r2 = r * r;
                    for i in 0..d {
                        v[i] = -c * x[i] / r2;
                        for j in 0..d {
                            let delta = if i == j { 1.0 } else { 0.0 };
                            jac[i * d + j] = -c * (delta / r2 - 2.0 * x[i] * x[j] / (r2 * r2));
                        }
                    }
                }
                Atom::Linear(a) => {
                    for i in 0..d {
                        v[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
                        for j in 0..d {
                            jac[i * d + j] = a[i * d + j];
                        }
                    }
                }
                Atom::Constant(c) => v[..d].copy_from_slice(c),
                Atom::Gaussian(a, w) => {
                    let g = (-r * r / (2.0 * w * w)).exp();
                    for i in 0..d {
                        v[i] = a[i] * g;
                        for j in 0..d {
                            jac[i * d + j] = -a[i] * g * x[j] / (w * w);
                        }
                    }
                }
                Atom::Indicator(rho, c) => {
                    if (r - rho).abs() <= 1e-14 * rho.max(1.0) {
                        return Err(LabError::Domain(
                            "gradient of an indicator field on its jump sphere".into(),
                        ));
                    }
                    if r < *rho {
                        v[..d].copy_from_slice(c);
                    }
                }
                Atom::Grid { fd_step, .. } => {
                    fd_grad(node, t, x, *fd_step, out);
                    return Ok(());
                }
            }
            for i in 0..d {
                for j in 0..d {
                    let chi_grad = if r > 0.0 { dchi * x[j] / r } else { 0.0 };
                    out[i * d + j] = e * (chi * jac[i * d + j] + v[i] * chi_grad);
                }
            }
            Ok(())
        }
        Node::Retimed { pieces, inner, env } => {
            match retime(pieces, t) {
                Some(s) => {
                    grad_node(inner, s, x, out)?;
                    let e = env.eval(t);
                    for v in out[..d * d].iter_mut() {
                        *v *= e;
                    }
                }
                None => out[..d * d].fill(0.0),
            }
            Ok(())
        }
        Node::Scaled { lambda, inner, env } => {
            grad_node(inner, t, x, out)?;
            let s = lambda * env.eval(t);
            for v in out[..d * d].iter_mut() {
                *v *= s;
            }
            Ok(())
        }
        Node::Sum { terms, env } => {
            let mut acc = [0.0; MAX_DIM * MAX_DIM];
            let mut tmp = [0.0; MAX_DIM * MAX_DIM];
            for term in terms {
                grad_node(term, t, x, &mut tmp[..d * d])?;
                for k in 0..d * d {
                    acc[k] += tmp[k];
                }
            }
            let s = env.eval(t);
            for k in 0..d * d {
                out[k] = s * acc[k];
            }
            Ok(())
        }
        Node::Truncated { m, inner, env } => {
            let mut v = [0.0; MAX_DIM];
            eval_node(inner, t, x, &mut v[..d]);
            if norm(&v[..d]) <= *m {
                grad_node(inner, t, x, out)?;
                let s = env.eval(t);
                for g in out[..d * d].iter_mut() {
                    *g *= s;
                }
            } else {
                out[..d * d].fill(0.0);
            }
            Ok(())
        }
        Node::Dilated { lambda, inner, env } => {
            let mut y = [0.0; MAX_DIM];
            for i in 0..d {
                y[i] = lambda * x[i];
            }
            grad_node(inner, t, &y[..d], out)?;
            let s = lambda * lambda * env.eval(t);
            for g in out[..d * d].iter_mut() {
                *g *= s;
            }
            Ok(())
        }
        Node::Projected { index, inner, env } => {
            let mut tmp = [0.0; MAX_DIM * MAX_DIM];
            grad_node(inner, t, x, &mut tmp[..d * d])?;
            out[..d * d].fill(0.0);
            let s = env.eval(t);
            for j in 0..d {
                out[index * d + j] = s * tmp[index * d + j];
            }
            Ok(())
        }
        Node::Mollified {
            c_m,
            eps,
            support,
            env,
            body,
        } => {
            if norm(x) >= *support {
                out[..d * d].fill(0.0);
                return Ok(());
            }
            match body {
                Mollification::Radial(table) => table.grad(x, out),
                Mollification::Spatial { inner, rule }
                | Mollification::SpaceTime { inner, rule } => {
                    let mut v = [0.0; MAX_DIM];
                    spatial_convolve(inner, rule, *eps, t, x, &mut v[..d], Some(out));
                }
            }
            let s = c_m * env.eval(t);
            for g in out[..d * d].iter_mut() {
                *g *= s;
            }
            Ok(())
        }
    }
}

fn sup_node(node: &Node, t0: f64, t1: f64) -> f64 {
    match node {
        Node::Atomic { atom, radius, env } => {
            let e = env.sup_abs(t0, t1);
            let vnorm = |v: &[f64]| norm(v);
            e * match atom {
                Atom::Zero => 0.0,
                Atom::Hardy(c) => {
                    if *c == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
                Atom::Linear(a) => {
                    let fro: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                    fro * radius
                }
                Atom::Constant(v) | Atom::Gaussian(v, _) | Atom::Indicator(_, v) => vnorm(v),
                Atom::Grid { values, .. } => {
                    let dd = values.len().max(1);
                    let _ = dd;
                    values.iter().map(|v| v.abs()).fold(0.0, f64::max) * (MAX_DIM as f64).sqrt()
                }
            }
        }
        Node::Scaled { lambda, inner, env } => {
            lambda.abs() * env.sup_abs(t0, t1) * sup_node(inner, t0, t1)
        }
        Node::Sum { terms, env } => {
            env.sup_abs(t0, t1) * terms.iter().map(|n| sup_node(n, t0, t1)).sum::<f64>()
        }
        Node::Truncated { m, inner, env } => env.sup_abs(t0, t1) * m.min(sup_node(inner, t0, t1)),
        Node::Dilated { lambda, inner, env } => {
            lambda.abs() * env.sup_abs(t0, t1) * sup_node(inner, t0, t1)
        }
        Node::Projected { inner, env, .. } => env.sup_abs(t0, t1) * sup_node(inner, t0, t1),
        Node::Retimed { pieces, inner, env } => {
            let mut best: f64 = 0.0;
            for p in pieces {
                let (a, b) = (p.start.max(t0), p.end.min(t1));
                if a <= b {
                    let (u, v) = (p.map(a), p.map(b));
                    best = best.max(sup_node(inner, u.min(v), u.max(v)));
                }
            }
            env.sup_abs(t0, t1) * best
        }
        Node::Mollified {
            c_m,
            env,
            body,
            eps,
            ..
        } => {
            let inner_sup = match body {
                Mollification::Radial(table) => {
                    table.psi.iter().map(|v| v.abs()).fold(0.0, f64::max) * 1.0001
                }
                Mollification::Spatial { inner, .. } => sup_node(inner, t0, t1),
                Mollification::SpaceTime { inner, .. } => sup_node(inner, t0 - eps, t1 + eps),
            };
            c_m * env.sup_abs(t0, t1) * inner_sup
        }
    }
}

/// Evaluates `b(t, x)` with dimension checking.
pub fn eval_drift(spec: &DriftSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.dimension {
        return Err(LabError::InvalidArgument(format!(
            "point has {} coordinates, drift dimension is {}",
            x.len(),
            spec.dimension
        )));
    }
    let field = Drift::new(spec)?;
    let mut out = vec![0.0; x.len()];
    field.eval_into(t, x, &mut out);
    Ok(out)
}

/// Row-major Jacobian `(d_j b_i)` of the field at `(t, x)`.
pub fn grad_drift(spec: &DriftSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.dimension {
        return Err(LabError::InvalidArgument(format!(
            "point has {} coordinates, drift dimension is {}",
            x.len(),
            spec.dimension
        )));
    }
    let field = Drift::new(spec)?;
    let d = x.len();
    let mut out = vec![0.0; d * d];
    field.grad_into(t, x, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_hardy_values() {
        let z = DriftSpec::zero(3, 1.0);
        assert_eq!(eval_drift(&z, 0.3, &[0.1, 0.2, 0.3]).unwrap(), vec![0.0; 3]);
        let h = DriftSpec::hardy(0.5, 3, 4.0);
        let v = eval_drift(&h, 0.0, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, vec![-0.5, 0.0, 0.0]);
        let s = DriftSpec::scaled(2.0, h.clone());
        assert_eq!(
            eval_drift(&s, 0.0, &[1.0, 0.0, 0.0]).unwrap(),
            vec![-1.0, 0.0, 0.0]
        );
        assert_eq!(eval_drift(&h, 0.0, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            eval_drift(&h, 0.0, &[1.0, 0.0]),
            Err(LabError::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_outside_cutoff_for_all_kinds() {
        let kinds = vec![
            DriftSpec::hardy(1.0, 3, 1.0),
            DriftSpec::linear_diagonal(-1.0, 3, 1.0),
            DriftSpec::constant(vec![1.0, 2.0, 3.0], 1.0),
            DriftSpec::gaussian(vec![1.0, 0.0, 0.0], 0.3, 1.0),
            DriftSpec::indicator_ball(2.0, vec![1.0, 0.0, 0.0], 1.0),
            DriftSpec::truncated(DriftSpec::hardy(1.0, 3, 1.0), 3.0),
            DriftSpec::mollified(DriftSpec::hardy(1.0, 3, 1.0), Some(10.0), 0.05, 0.9),
            DriftSpec::dilated(DriftSpec::hardy(1.0, 3, 2.0), 2.0),
        ];
        for k in kinds {
            let r = k.support_radius();
            let v = eval_drift(&k, 0.0, &[r, 0.0, 0.0]).unwrap();
            assert_eq!(v, vec![0.0; 3], "{k:?}");
            let v = eval_drift(&k, 0.0, &[0.0, -1.01 * r, 0.0]).unwrap();
            assert_eq!(v, vec![0.0; 3]);
        }
    }

    #[test]
    fn linear_gradient_and_zero_gradient() {
        let l = DriftSpec::linear_diagonal(-1.0, 3, 4.0);
        let g = grad_drift(&l, 0.0, &[0.5, 0.2, -0.3]).unwrap();
        let want = [-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = grad_drift(&DriftSpec::zero(3, 1.0), 0.0, &[0.1, 0.1, 0.1]).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(matches!(
            grad_drift(&DriftSpec::hardy(1.0, 3, 1.0), 0.0, &[0.0; 3]),
            Err(LabError::Domain(_))
        ));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let specs = vec![
            DriftSpec::hardy(0.7, 3, 2.0),
            DriftSpec::gaussian(vec![0.3, -0.2, 1.0], 0.4, 2.0),
            DriftSpec::dilated(
                DriftSpec::linear(
                    vec![
                        vec![0.0, 1.0, 0.0],
                        vec![-1.0, 0.0, 0.0],
                        vec![0.0, 0.0, 0.5],
                    ],
                    2.0,
                ),
                1.5,
            ),
        ];
        let x = [0.7, 0.3, -0.25];
        for s in specs {
            let f = Drift::new(&s).unwrap();
            let mut g = [0.0; 9];
            f.grad_into(0.0, &x, &mut g).unwrap();
            let h = 1e-5;
            for j in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let mut fp = [0.0; 3];
                let mut fm = [0.0; 3];
                f.eval_into(0.0, &xp, &mut fp);
                f.eval_into(0.0, &xm, &mut fm);
                for i in 0..3 {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert!(
                        (fd - g[i * 3 + j]).abs() < 1e-7,
                        "{s:?} {i}{j}: {fd} vs {}",
                        g[i * 3 + j]
                    );
                }
            }
        }
    }

    #[test]
    fn sampled_grid_reproduces_linear_data() {
        let n = 5;
        let hw = 1.0;
        let mut values = vec![];
        crate::quadrature::for_each_index(3, n, |idx| {
            let x: Vec<f64> = idx
                .iter()
                .map(|&i| -hw + 2.0 * hw * i as f64 / (n - 1) as f64)
                .collect();
            values.extend_from_slice(&[x[0] + 2.0 * x[1], -x[2], 0.5]);
        });
        let s = DriftSpec::sampled_grid(3, hw, n, values, 10.0);
        let v = eval_drift(&s, 0.0, &[0.3, -0.41, 0.77]).unwrap();
        assert!((v[0] - (0.3 - 0.82)).abs() < 1e-12);
        assert!((v[1] + 0.77).abs() < 1e-12);
        let g = grad_drift(&s, 0.0, &[0.3, -0.41, 0.77]).unwrap();
        assert!(
            (g[0] - 1.0).abs() < 1e-8 && (g[1] - 2.0).abs() < 1e-8 && (g[5] + 1.0).abs() < 1e-8
        );
    }
}
