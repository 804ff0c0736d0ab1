//! Rayleigh quotients `||b(t,.) phi||_2^2 / ||grad phi||_2^2` over a finite
//! family of test functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Drift, DriftKind, DriftSpec};
use crate::error::{LabError, Result};
use crate::quadrature::{sphere_area, RadialRule, SphereRule, TensorRule, RADIAL_NODES};
use crate::MAX_DIM;

/// Closed-form scalar test functions with analytic gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum TestFunction {
    /// `exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { center: Vec<f64>, width: f64 },
    /// `|x|^{-(d-2)/2 + eta} psi(|x|)` with `psi` a quintic step in `log r`
    /// from 1 at `inner` to 0 at `outer`.
    HardyQuasiOptimizer { eta: f64, inner: f64, outer: f64 },
    /// `prod_k (1 - ((x_k - c_k)/a_k)^2)^3` on the box `|x_k - c_k| < a_k`.
    TensorBump {
        center: Vec<f64>,
        half_widths: Vec<f64>,
    },
}

fn smoothstep(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0)
    } else {
        let s2 = s * s;
        (
            s2 * s * (10.0 - 15.0 * s + 6.0 * s2),
            30.0 * s2 * (1.0 - s) * (1.0 - s),
        )
    }
}

impl TestFunction {
    pub fn id(&self) -> String {
        match self {
            TestFunction::Gaussian { center, width } => format!("gauss(w={width},c={center:?})"),
            TestFunction::HardyQuasiOptimizer { eta, inner, outer } => {
                format!("hardy(eta={eta},r1={inner},r2={outer})")
            }
            TestFunction::TensorBump {
                center,
                half_widths,
            } => format!("bump(a={half_widths:?},c={center:?})"),
        }
    }

    /// Radial about the origin.
    fn is_radial(&self) -> bool {
        match self {
            TestFunction::Gaussian { center, .. } => center.iter().all(|v| *v == 0.0),
            TestFunction::HardyQuasiOptimizer { .. } => true,
            TestFunction::TensorBump { .. } => false,
        }
    }

    /// `(phi(r), phi'(r))` for radial members.
    fn radial(&self, d: usize, r: f64) -> (f64, f64) {
        match self {
            TestFunction::Gaussian { width, .. } => {
                let e = (-r * r / (2.0 * width * width)).exp();
                (e, -r / (width * width) * e)
            }
            TestFunction::HardyQuasiOptimizer { eta, inner, outer } => {
                if r >= *outer || r <= 0.0 {
                    return (0.0, 0.0);
                }
                let a = -(d as f64 - 2.0) / 2.0 + eta;
                let p = r.powf(a);
                let (psi, dpsi) = if r <= *inner {
                    (1.0, 0.0)
                } else {
                    let l = (outer / inner).ln();
                    let (s, ds) = smoothstep((r / inner).ln() / l);
                    (1.0 - s, -ds / (l * r))
                };
                (p * psi, a * p / r * psi + p * dpsi)
            }
            TestFunction::TensorBump { .. } => unreachable!("tensor bumps are not radial"),
        }
    }

    /// Value and gradient at `x`.
    pub fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = x.len();
        match self {
            TestFunction::Gaussian { center, width } => {
                let r2: f64 = (0..d).map(|k| (x[k] - center[k]).powi(2)).sum();
                let e = (-r2 / (2.0 * width * width)).exp();
                for k in 0..d {
                    grad[k] = -(x[k] - center[k]) / (width * width) * e;
                }
                e
            }
            TestFunction::HardyQuasiOptimizer { .. } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let (v, dv) = self.radial(d, r);
                for k in 0..d {
                    grad[k] = if r > 0.0 { dv * x[k] / r } else { 0.0 };
                }
                v
            }
            TestFunction::TensorBump {
                center,
                half_widths,
            } => {
                let mut f = [0.0; MAX_DIM];
                let mut df = [0.0; MAX_DIM];
                for k in 0..d {
                    let s = (x[k] - center[k]) / half_widths[k];
                    if s.abs() >= 1.0 {
                        grad[..d].fill(0.0);
                        return 0.0;
                    }
                    let q = 1.0 - s * s;
                    f[k] = q * q * q;
                    df[k] = -6.0 * s * q * q / half_widths[k];
                }
                let v: f64 = f[..d].iter().product();
                for k in 0..d {
                    grad[k] = df[k] * (0..d).filter(|&j| j != k).map(|j| f[j]).product::<f64>();
                }
                v
            }
        }
    }

    /// Radii (about the origin) where the member is non-smooth or its support ends.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            TestFunction::Gaussian { width, center } => {
                let c = center.iter().map(|v| v * v).sum::<f64>().sqrt();
                vec![c + 10.0 * width]
            }
            TestFunction::HardyQuasiOptimizer { inner, outer, .. } => vec![*inner, *outer],
            TestFunction::TensorBump { .. } => vec![],
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: &str| Err(LabError::InvalidArgument(format!("{}: {m}", self.id())));
        match self {
            TestFunction::Gaussian { center, width } => {
                if center.len() != d {
                    return bad("center dimension mismatch");
                }
                if !(*width > 0.0) {
                    return bad("width must be positive");
                }
            }
            TestFunction::HardyQuasiOptimizer { eta, inner, outer } => {
                if !(*eta > 0.0) || !(*inner > 0.0) || !(outer > inner) {
                    return bad("need eta > 0 and 0 < inner < outer");
                }
            }
            TestFunction::TensorBump {
                center,
                half_widths,
            } => {
                if center.len() != d
                    || half_widths.len() != d
                    || half_widths.iter().any(|a| !(*a > 0.0))
                {
                    return bad("center/half_widths must have length d and positive widths");
                }
            }
        }
        Ok(())
    }
}

/// A finite surrogate for the supremum over all Sobolev test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionFamily {
    pub name: String,
    pub dimension: usize,
    pub members: Vec<TestFunction>,
    /// Gauss nodes per radial panel.
    #[serde(default = "default_radial_nodes")]
    pub radial_nodes: usize,
    /// Gauss nodes per axis and panels per axis of the tensor rule.
    #[serde(default = "default_tensor")]
    pub tensor: (usize, usize),
    /// Radial breakpoints of the drift being tested.
    #[serde(skip)]
    extra_breaks: Vec<f64>,
}

fn default_radial_nodes() -> usize {
    RADIAL_NODES
}

fn default_tensor() -> (usize, usize) {
    (8, 6)
}

/// Gradient and L2 norms of a family member, from [`TestFunctionFamily::norms`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberNorms {
    pub l2: f64,
    pub grad_l2: f64,
}

impl TestFunctionFamily {
    pub fn new(name: &str, dimension: usize, members: Vec<TestFunction>) -> Result<Self> {
        let fam = Self {
            name: name.to_string(),
            dimension,
            members,
            radial_nodes: RADIAL_NODES,
            tensor: default_tensor(),
            extra_breaks: vec![],
        };
        fam.validate()?;
        Ok(fam)
    }

    /// `|x|^{-(d-2)/2+eta} psi(|x|)` with `eta` in `{0.05, 0.1, 0.2}` and
    /// inner/outer ratios `{1e-2, 1e-3, 1e-4}`; `outer` should lie inside the
    /// cutoff plateau.
    pub fn hardy_quasi_optimizers(d: usize, outer: f64) -> Result<Self> {
        let mut members = vec![];
        for &eta in &[0.05, 0.1, 0.2] {
            for &ratio in &[1e-2, 1e-3, 1e-4] {
                members.push(TestFunction::HardyQuasiOptimizer {
                    eta,
                    inner: ratio * outer,
                    outer,
                });
            }
        }
        Self::new("hardy-quasi-optimizers", d, members)
    }

    /// Quasi-optimizers plus centred and shifted Gaussians and tensor bumps
    /// at scales tied to the cutoff radius `r`.
    pub fn reference(d: usize, r: f64) -> Result<Self> {
        let mut fam = Self::hardy_quasi_optimizers(d, 0.5 * r)?;
        let mut shift = vec![0.0; d];
        shift[0] = 0.25 * r;
        for &w in &[r / 16.0, r / 8.0, r / 4.0] {
            fam.members.push(TestFunction::Gaussian {
                center: vec![0.0; d],
                width: w,
            });
            fam.members.push(TestFunction::Gaussian {
                center: shift.clone(),
                width: w,
            });
        }
        for &a in &[r / 8.0, r / 2.0] {
            fam.members.push(TestFunction::TensorBump {
                center: vec![0.0; d],
                half_widths: vec![a; d],
            });
        }
        fam.name = "reference".into();
        fam.validate()?;
        Ok(fam)
    }

    fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(LabError::InvalidArgument(
                "test-function family is empty".into(),
            ));
        }
        for m in &self.members {
            m.validate(self.dimension)?;
            let n = self.member_norms(m);
            if !(n.grad_l2 > 0.0 && n.grad_l2.is_finite() && n.l2.is_finite()) {
                return Err(LabError::Numerical(format!(
                    "{}: need finite ||phi||_2 and 0 < ||grad phi||_2 < inf, got {:?}",
                    m.id(),
                    n
                )));
            }
        }
        Ok(())
    }

    /// Quadrature provenance string.
    pub fn descriptor(&self) -> String {
        format!(
            "{}[{} members; radial Gauss-Legendre {} nodes/panel; tensor Gauss {}x{} per axis]",
            self.name,
            self.members.len(),
            self.radial_nodes,
            self.tensor.0,
            self.tensor.1
        )
    }

    pub fn member_norms(&self, m: &TestFunction) -> MemberNorms {
        let (phi2, grad2) = self.integrate_member(m, &|_, _| 1.0);
        MemberNorms {
            l2: phi2.sqrt(),
            grad_l2: grad2.sqrt(),
        }
    }

    /// Returns `(int w phi^2, int |grad phi|^2)` where `w(x, rho)` is a weight.
    fn integrate_member(
        &self,
        m: &TestFunction,
        w: &(dyn Fn(&[f64], f64) -> f64 + Sync),
    ) -> (f64, f64) {
        let d = self.dimension;
        let mut g = [0.0; MAX_DIM];
        match m {
            TestFunction::TensorBump {
                center,
                half_widths,
            } => {
                let rule = TensorRule::new(self.tensor.0, self.tensor.1);
                let lo: Vec<f64> = (0..d).map(|k| center[k] - half_widths[k]).collect();
                let hi: Vec<f64> = (0..d).map(|k| center[k] + half_widths[k]).collect();
                let num = rule.integrate(&lo, &hi, |x| {
                    let v = m.eval(x, &mut g[..d]);
                    v * v * w(x, 0.0)
                });
                let den = rule.integrate(&lo, &hi, |x| {
                    m.eval(x, &mut g[..d]);
                    g[..d].iter().map(|v| v * v).sum()
                });
                (num, den)
            }
            _ if m.is_radial() => {
                let rule = RadialRule::new(self.radial_nodes);
                let area = sphere_area(d);
                let r_max = m.breakpoints().iter().copied().fold(0.0, f64::max);
                let mut breaks = m.breakpoints();
                breaks.extend(self.extra_breaks.iter().copied());
                let mut x = [0.0; MAX_DIM];
                let mut num = 0.0;
                let mut den = 0.0;
                for (r, wr) in rule.nodes(r_max, &breaks) {
                    let (v, dv) = m.radial(d, r);
                    x[0] = r;
                    let jac = area * wr * r.powi(d as i32 - 1);
                    num += jac * v * v * w(&x[..d], r);
                    den += jac * dv * dv;
                }
                (num, den)
            }
            TestFunction::Gaussian { center, width } => {
                let rule = RadialRule::new(self.radial_nodes.min(96));
                let sphere = SphereRule::new(d, if d == 3 { 24 } else { 6 }, 48);
                let dist = center.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mut breaks = vec![dist];
                for f in &self.extra_breaks {
                    breaks.push((dist - f).abs());
                    breaks.push(dist + f);
                }
                let nodes =
                    crate::quadrature::ball_nodes(&rule, &sphere, center, 10.0 * width, &breaks);
                let mut num = 0.0;
                let mut den = 0.0;
                for (p, wt) in &nodes {
                    let v = m.eval(&p[..d], &mut g[..d]);
                    num += wt * v * v * w(&p[..d], 0.0);
                    den += wt * g[..d].iter().map(|v| v * v).sum::<f64>();
                }
                (num, den)
            }
            _ => unreachable!(),
        }
    }
}

/// One entry of a [`FormBoundReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quotient {
    pub id: String,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormBoundReport {
    pub delta_hat: f64,
    pub quotients: Vec<Quotient>,
    pub family_descriptor: String,
    pub argmax_id: String,
    pub argmax_t: f64,
    /// A maximum over a finite family: a lower bound for the form-bound.
    pub lower_bound: bool,
}

/// `delta_hat = max over (phi, t) of ||b(t,.) phi||^2 / ||grad phi||^2`.
pub fn estimate_form_bound(
    spec: &DriftSpec,
    family: &TestFunctionFamily,
    times: &[f64],
) -> Result<FormBoundReport> {
    if family.members.is_empty() {
        return Err(LabError::InvalidArgument(
            "test-function family is empty".into(),
        ));
    }
    if family.dimension != spec.dimension {
        return Err(LabError::InvalidArgument(format!(
            "family dimension {} differs from drift dimension {}",
            family.dimension, spec.dimension
        )));
    }
    // scalar factors leave the quadrature untouched, so homogeneity is exact
    if let DriftKind::Scaled { lambda, inner } = &spec.kind {
        if spec.time_envelope.is_unit() && spec.cutoff_radius >= inner.support_radius() {
            let mut rep = estimate_form_bound(inner, family, times)?;
            let f = lambda * lambda;
            rep.delta_hat *= f;
            rep.quotients.iter_mut().for_each(|q| q.value *= f);
            return Ok(rep);
        }
    }
    let times = if times.is_empty() {
        vec![0.0]
    } else {
        times.to_vec()
    };
    let field = Drift::new(spec)?;
    let d = spec.dimension;
    let radial_field = spec.symmetry().is_radial();
    let mut fam = family.clone();
    fam.extra_breaks = spec.radial_features();
    let pairs: Vec<(usize, f64)> = (0..fam.members.len())
        .flat_map(|i| times.iter().map(move |&t| (i, t)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, t)| {
            let m = &fam.members[i];
            let weight = |x: &[f64], r: f64| -> f64 {
                let mut b = [0.0; MAX_DIM];
                if radial_field && m.is_radial() {
                    let mut y = [0.0; MAX_DIM];
                    y[0] = r;
                    field.eval_into(t, &y[..d], &mut b[..d]);
                } else {
                    field.eval_into(t, x, &mut b[..d]);
                }
                b[..d].iter().map(|v| v * v).sum()
            };
            let (num, den) = fam.integrate_member(m, &weight);
            num / den
        })
        .collect();
    let mut quotients = Vec::with_capacity(pairs.len());
    let mut best = 0usize;
    for (k, (&(i, t), &v)) in pairs.iter().zip(&values).enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(LabError::Numerical(format!(
                "Rayleigh quotient for {} at t = {t} is {v}",
                fam.members[i].id()
            )));
        }
        if v > values[best] {
            best = k;
        }
        quotients.push(Quotient {
            id: fam.members[i].id(),
            t,
            value: v,
        });
    }
    Ok(FormBoundReport {
        delta_hat: values[best],
        argmax_id: quotients[best].id.clone(),
        argmax_t: quotients[best].t,
        quotients,
        family_descriptor: fam.descriptor(),
        lower_bound: true,
    })
}

/// Time points `t0 + k (t1 - t0)/(n - 1)`.
pub fn time_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![t0];
    }
    (0..n)
        .map(|k| t0 + (t1 - t0) * k as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_has_zero_bound() {
        let fam = TestFunctionFamily::hardy_quasi_optimizers(3, 0.5).unwrap();
        let r = estimate_form_bound(&DriftSpec::zero(3, 2.0), &fam, &[0.0]).unwrap();
        assert_eq!(r.delta_hat, 0.0);
        assert_eq!(r.quotients.len(), 9);
    }

    #[test]
    fn quasi_optimizer_gradient_matches_fd() {
        let m = TestFunction::HardyQuasiOptimizer {
            eta: 0.1,
            inner: 0.01,
            outer: 1.0,
        };
        for &r in &[0.005, 0.05, 0.3, 0.9] {
            let h = 1e-7 * r;
            let fd = (m.radial(3, r + h).0 - m.radial(3, r - h).0) / (2.0 * h);
            let an = m.radial(3, r).1;
            assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "{r}: {fd} {an}");
        }
    }

    #[test]
    fn gaussian_gradient_norm_closed_form() {
        // ||grad phi||^2 = (d/2) w^{d-2} pi^{d/2} for phi = exp(-|x|^2/(2w^2))
        let w = 0.3;
        let fam = TestFunctionFamily::new(
            "g",
            3,
            vec![
                TestFunction::Gaussian {
                    center: vec![0.0; 3],
                    width: w,
                },
                TestFunction::Gaussian {
                    center: vec![0.2, 0.1, 0.0],
                    width: w,
                },
            ],
        )
        .unwrap();
        let want = 1.5 * w * std::f64::consts::PI.powf(1.5);
        for m in &fam.members {
            let n = fam.member_norms(m);
            assert!(
                (n.grad_l2.powi(2) - want).abs() < 1e-8 * want,
                "{} vs {want}",
                n.grad_l2.powi(2)
            );
        }
    }

    #[test]
    fn tensor_bump_norms_are_finite() {
        let fam = TestFunctionFamily::new(
            "b",
            3,
            vec![TestFunction::TensorBump {
                center: vec![0.1; 3],
                half_widths: vec![0.5; 3],
            }],
        )
        .unwrap();
        let n = fam.member_norms(&fam.members[0]);
        // int_{-1}^{1} (1-s^2)^6 ds = 2048/3003
        let want = (0.5f64 * 2048.0 / 3003.0).powi(3);
        assert!(
            (n.l2.powi(2) - want).abs() < 1e-10,
            "{} {want}",
            n.l2.powi(2)
        );
    }
}
