use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{grid_index, PathEnsemble};
use crate::error::{LabError, Result};
use crate::stats::{loglog_fit, LinearFit};
use crate::MAX_DIM;

/// Jacobians `J = d X / d x` at the record times of an ensemble, optionally
/// with Malliavin derivatives `D_s X_t` for several `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEnsemble {
    pub dimension: usize,
    pub starts: usize,
    pub paths: usize,
    pub s: f64,
    pub record_times: Vec<f64>,
    pub start_weights: Vec<f64>,
    /// Shape `(starts, paths, records, d*d)`, row-major matrices.
    pub jacobians: Vec<f64>,
    pub malliavin: Vec<MalliavinSlice>,
}

/// `D_s X_t` at record times `t >= s`.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinSlice {
    pub s: f64,
    /// Index of the first record time `>= s`.
    pub first_record: usize,
    /// Shape `(starts, paths, records - first_record, d*d)`.
    pub values: Vec<f64>,
}

impl FlowEnsemble {
    pub fn records(&self) -> usize {
        self.record_times.len()
    }

    pub fn jacobian(&self, start: usize, path: usize, record: usize) -> &[f64] {
        let dd = self.dimension * self.dimension;
        let i = ((start * self.paths + path) * self.records() + record) * dd;
        &self.jacobians[i..i + dd]
    }
}

impl MalliavinSlice {
    pub fn matrix(&self, flows: &FlowEnsemble, start: usize, path: usize, record: usize) -> &[f64] {
        let dd = flows.dimension * flows.dimension;
        let n = flows.records() - self.first_record;
        let i = ((start * flows.paths + path) * n + record - self.first_record) * dd;
        &self.values[i..i + dd]
    }
}

/// Integrates `J_{k+1} = J_k + grad b(t_k, X_k) J_k dt` from `J_from = I` along
/// one path, calling `record(k, J_k)` for `k >= from`.
pub(crate) fn jacobian_walk(
    ens: &PathEnsemble,
    start: usize,
    path: usize,
    from: usize,
    mut record: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let d = ens.dimension;
    let dt = ens.dt;
    let field = ens.field();
    let mut j = [0.0; MAX_DIM * MAX_DIM];
    let mut g = [0.0; MAX_DIM * MAX_DIM];
    let mut next = [0.0; MAX_DIM * MAX_DIM];
    let mut failure: Option<LabError> = None;
    ens.replay(start, path, |k, t, x, _| {
        if k < from || failure.is_some() {
            return;
        }
        if k == from {
            j[..d * d].fill(0.0);
            for i in 0..d {
                j[i * d + i] = 1.0;
            }
        }
        record(k, &j[..d * d]);
        if k == ens.steps {
            return;
        }
        if let Err(e) = field.grad_into(t, x, &mut g[..d * d]) {
            failure = Some(LabError::Numerical(format!(
                "gradient failed on path {path} at step {k}: {e}"
            )));
            return;
        }
        for r in 0..d {
            for c in 0..d {
                let mut acc = 0.0;
                for m in 0..d {
                    acc += g[r * d + m] * j[m * d + c];
                }
                next[r * d + c] = j[r * d + c] + acc * dt;
            }
        }
        j[..d * d].copy_from_slice(&next[..d * d]);
        if j[..d * d].iter().any(|v| !v.is_finite()) {
            failure = Some(LabError::Numerical(format!(
                "non-finite Jacobian on path {path} at step {}",
                k + 1
            )));
        }
    })?;
    failure.map_or(Ok(()), Err)
}

/// Matrices at record steps `>= from` for every `(start, path)`.
fn collect_walks(ens: &PathEnsemble, from: usize) -> Result<(usize, Vec<f64>)> {
    let d = ens.dimension;
    let dd = d * d;
    let stride = ens.record_stride;
    let first = from.div_ceil(stride);
    let n = ens.records() - first;
    let mut out = vec![0.0; ens.starts.len() * ens.paths * n * dd];
    let outcomes: Vec<Result<()>> = out
        .par_chunks_mut(n * dd)
        .enumerate()
        .map(|(i, chunk)| {
            jacobian_walk(ens, i / ens.paths, i % ens.paths, from, |k, m| {
                if k % stride == 0 {
                    let r = k / stride - first;
                    chunk[r * dd..(r + 1) * dd].copy_from_slice(m);
                }
            })
        })
        .collect();
    outcomes.into_iter().collect::<Result<Vec<()>>>()?;
    Ok((first, out))
}

/// Flow derivative `grad_x X_t` along every path of the ensemble.
pub fn variational_flow(ens: &PathEnsemble) -> Result<FlowEnsemble> {
    let (_, jacobians) = collect_walks(ens, 0)?;
    Ok(FlowEnsemble {
        dimension: ens.dimension,
        starts: ens.starts.len(),
        paths: ens.paths,
        s: ens.s,
        record_times: ens.record_times(),
        start_weights: ens.start_weights.clone(),
        jacobians,
        malliavin: vec![],
    })
}

/// `D_s X_t` for each `s` in `s_list` (grid times in `[s_0, T]`), by the same
/// recursion as [`variational_flow`] started at `s`.
pub fn malliavin_derivative(ens: &PathEnsemble, s_list: &[f64]) -> Result<Vec<MalliavinSlice>> {
    s_list
        .iter()
        .map(|&s| {
            let idx = grid_index(s, ens.dt).map_err(|_| {
                LabError::InvalidArgument(format!("s = {s} is not on the ensemble time grid"))
            })?;
            if idx < ens.offset || idx > ens.offset + ens.steps {
                return Err(LabError::InvalidArgument(format!(
                    "s = {s} lies outside [{}, {}]",
                    ens.s, ens.t_end
                )));
            }
            let (first_record, values) = collect_walks(ens, idx - ens.offset)?;
            Ok(MalliavinSlice {
                s,
                first_record,
                values,
            })
        })
        .collect()
}

/// Measured norm curve with the anchored power envelope `K x^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub variable: String,
    pub x: Vec<f64>,
    pub norm: Vec<f64>,
    pub exponent: f64,
    /// Envelope constant, anchored at the largest sampled `x`.
    pub k: f64,
    pub envelope: Vec<f64>,
    pub dominated: bool,
    pub fit: Option<LinearFit>,
    pub degenerate: bool,
}

impl DecayCurve {
    pub fn anchored(variable: &str, x: Vec<f64>, norm: Vec<f64>, exponent: f64) -> Self {
        let degenerate = norm.iter().all(|v| *v == 0.0);
        let anchor = (0..x.len()).max_by(|&a, &b| x[a].total_cmp(&x[b]));
        let k = anchor.map_or(0.0, |i| norm[i] / x[i].powf(exponent));
        let envelope: Vec<f64> = x.iter().map(|t| k * t.powf(exponent)).collect();
        let dominated = norm
            .iter()
            .zip(&envelope)
            .all(|(n, e)| *n <= e * (1.0 + 1e-12));
        let fit = loglog_fit(&x, &norm);
        Self {
            variable: variable.into(),
            x,
            norm,
            exponent,
            k,
            envelope,
            dominated,
            fit,
            degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowNormReport {
    pub r: u32,
    /// `||grad X_t - I||` against `t - s`, envelope exponent `1/(2r)`.
    pub flow: DecayCurve,
    /// Smallest-time norm is at most a quarter of the largest-time norm.
    pub tends_to_zero: bool,
    /// `||D_s X_t - I||` against `t - s`, exponent `1/(4r)`.
    pub malliavin_lag: Option<DecayCurve>,
    /// `||D_s X_T - D_s' X_T||` against `|s - s'|`, exponent `1/(4r)`.
    pub malliavin_gap: Option<DecayCurve>,
    pub degenerate: bool,
}

/// Lattice mixed norm `(sum_x w_x (E|A_x|^r)^2)^{1/(2r)}` with Frobenius `|.|`.
fn mixed_norm(flows: &FlowEnsemble, r: u32, mut a: impl FnMut(usize, usize, &mut [f64])) -> f64 {
    let dd = flows.dimension * flows.dimension;
    let mut buf = [0.0; MAX_DIM * MAX_DIM];
    let mut total = 0.0;
    for x in 0..flows.starts {
        let mut acc = 0.0;
        for p in 0..flows.paths {
            a(x, p, &mut buf[..dd]);
            let f = buf[..dd].iter().map(|v| v * v).sum::<f64>().sqrt();
            acc += f.powi(r as i32);
        }
        let inner = acc / flows.paths as f64;
        total += flows.start_weights[x] * inner * inner;
    }
    total.powf(1.0 / (2.0 * r as f64))
}

fn minus_identity(m: &[f64], d: usize, out: &mut [f64]) {
    out.copy_from_slice(m);
    for i in 0..d {
        out[i * d + i] -= 1.0;
    }
}

/// Decay of the flow and Malliavin derivatives in the truncated mixed norm
/// `L^{2r}(lattice, L^r(paths))`.
pub fn flow_norm_statistics(flows: &FlowEnsemble, r: u32) -> Result<FlowNormReport> {
    if r == 0 {
        return Err(LabError::InvalidArgument("r must be at least 1".into()));
    }
    let d = flows.dimension;
    let rf = r as f64;
    let (mut xs, mut norms) = (vec![], vec![]);
    for j in 1..flows.records() {
        xs.push(flows.record_times[j] - flows.s);
        norms.push(mixed_norm(flows, r, |x, p, out| {
            minus_identity(flows.jacobian(x, p, j), d, out)
        }));
    }
    if xs.is_empty() {
        return Err(LabError::InvalidArgument(
            "need at least two record times".into(),
        ));
    }
    let flow = DecayCurve::anchored("t", xs, norms, 1.0 / (2.0 * rf));
    let tends_to_zero = !flow.degenerate && flow.norm[0] <= 0.25 * flow.norm[flow.norm.len() - 1];

    let (malliavin_lag, malliavin_gap) = if flows.malliavin.is_empty() {
        (None, None)
    } else {
        let mut pts: Vec<(f64, f64)> = vec![];
        for sl in &flows.malliavin {
            for j in sl.first_record..flows.records() {
                let lag = flows.record_times[j] - sl.s;
                if lag > 0.0 {
                    pts.push((
                        lag,
                        mixed_norm(flows, r, |x, p, out| {
                            minus_identity(sl.matrix(flows, x, p, j), d, out)
                        }),
                    ));
                }
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let lag = (!pts.is_empty()).then(|| {
            DecayCurve::anchored(
                "t-s",
                pts.iter().map(|p| p.0).collect(),
                pts.iter().map(|p| p.1).collect(),
                1.0 / (4.0 * rf),
            )
        });
        let last = flows.records() - 1;
        let mut gaps: Vec<(f64, f64)> = vec![];
        for (i, a) in flows.malliavin.iter().enumerate() {
            for b in &flows.malliavin[i + 1..] {
                if a.s != b.s && a.first_record <= last && b.first_record <= last {
                    let n = mixed_norm(flows, r, |x, p, out| {
                        let (ma, mb) = (a.matrix(flows, x, p, last), b.matrix(flows, x, p, last));
                        for k in 0..d * d {
                            out[k] = ma[k] - mb[k];
                        }
                    });
                    gaps.push(((a.s - b.s).abs(), n));
                }
            }
        }
        gaps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let gap = (!gaps.is_empty()).then(|| {
            DecayCurve::anchored(
                "|s-s'|",
                gaps.iter().map(|p| p.0).collect(),
                gaps.iter().map(|p| p.1).collect(),
                1.0 / (4.0 * rf),
            )
        });
        (lag, gap)
    };
    Ok(FlowNormReport {
        r,
        degenerate: flow.degenerate,
        flow,
        tends_to_zero,
        malliavin_lag,
        malliavin_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::super::ensemble::{simulate_ensemble, EnsembleSettings, StartSpec};
    use super::*;
    use crate::DriftSpec;

    fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| a[i * d + k] * b[k * d + j]).sum();
            }
        }
        out
    }

    #[test]
    fn zero_drift_flow_is_identity() {
        let ens = simulate_ensemble(
            &DriftSpec::zero(3, 1.0),
            &StartSpec::point(vec![0.0; 3]),
            0.0,
            0.2,
            &EnsembleSettings::new(0.01, 10, 1),
        )
        .unwrap();
        let mut f = variational_flow(&ens).unwrap();
        f.malliavin = malliavin_derivative(&ens, &[0.0, 0.1]).unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert!(f.jacobians.chunks(9).all(|m| m == eye));
        let rep = flow_norm_statistics(&f, 2).unwrap();
        assert!(rep.degenerate && rep.flow.norm.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_jacobian_is_exponential() {
        let dt = 0.001;
        let ens = simulate_ensemble(
            &DriftSpec::linear_diagonal(-1.0, 3, 40.0),
            &StartSpec::point(vec![0.1, 0.0, 0.0]),
            0.0,
            0.5,
            &EnsembleSettings::new(dt, 8, 2).with_stride(100),
        )
        .unwrap();
        let f = variational_flow(&ens).unwrap();
        let sl = &malliavin_derivative(&ens, &[0.2]).unwrap()[0];
        for p in 0..8 {
            for j in 0..f.records() {
                let t = f.record_times[j];
                let m = f.jacobian(0, p, j);
                assert!((m[0] - (-t).exp()).abs() < dt, "{} vs {}", m[0], (-t).exp());
                assert_eq!(m[1], 0.0);
                if j >= sl.first_record {
                    let ms = sl.matrix(&f, 0, p, j);
                    assert!((ms[4] - (-(t - 0.2)).exp()).abs() < dt);
                }
            }
        }
        assert!(matches!(
            malliavin_derivative(&ens, &[0.2005]),
            Err(LabError::InvalidArgument(_))
        ));
    }

    #[test]
    fn malliavin_at_zero_is_bitwise_flow_and_semigroup_holds() {
        let b = DriftSpec::gaussian(vec![0.8, -0.4, 0.3], 0.5, 2.0);
        let ens = simulate_ensemble(
            &b,
            &StartSpec::Points {
                points: vec![vec![0.2, 0.1, 0.0], vec![-0.3, 0.0, 0.4]],
            },
            0.0,
            0.6,
            &EnsembleSettings::new(0.01, 6, 9).with_stride(10),
        )
        .unwrap();
        let f = variational_flow(&ens).unwrap();
        let sl = malliavin_derivative(&ens, &[0.0, 0.3]).unwrap();
        assert_eq!(sl[0].values, f.jacobians);
        let (u, t) = (3, 6);
        for x in 0..2 {
            for p in 0..6 {
                let comp = matmul(sl[1].matrix(&f, x, p, t), f.jacobian(x, p, u), 3);
                let direct = f.jacobian(x, p, t);
                let err = comp
                    .iter()
                    .zip(direct)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-10, "{err}");
            }
        }
    }

    #[test]
    fn envelope_is_anchored_at_the_largest_time() {
        let c = DecayCurve::anchored("t", vec![0.1, 0.2, 0.4], vec![0.01, 0.02, 0.04], 0.5);
        assert!((c.k - 0.04 / 0.4f64.sqrt()).abs() < 1e-15);
        assert!(c.dominated);
        let bad = DecayCurve::anchored("t", vec![0.1, 0.4], vec![0.5, 0.04], 0.5);
        assert!(!bad.dominated);
    }
}
