use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::MAX_DIM;

/// Symbolic description of a time-dependent vector field on `R^d`.
///
/// Atomic kinds are multiplied by the radial cutoff `chi_R` (equal to one on
/// `B_{R/2}` and zero outside `B_R`); composite kinds inherit the support of
/// their parts. Every kind is multiplied by its `time_envelope`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    #[serde(flatten)]
    pub kind: DriftKind,
    pub dimension: usize,
    pub cutoff_radius: f64,
    #[serde(default, skip_serializing_if = "TimeEnvelope::is_unit")]
    pub time_envelope: TimeEnvelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DriftKind {
    Zero,
    /// `-c x / |x|^2`.
    HardyAttractor {
        c: f64,
    },
    /// `A x`.
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    Constant {
        v: Vec<f64>,
    },
    /// `amplitude * exp(-|x|^2 / (2 width^2))`.
    Gaussian {
        amplitude: Vec<f64>,
        width: f64,
    },
    /// `v` on `B_radius(0)`, zero elsewhere.
    IndicatorBall {
        radius: f64,
        v: Vec<f64>,
    },
    /// Multilinear interpolation of nodal values on `[-half_width, half_width]^d`.
    SampledGrid {
        half_width: f64,
        points_per_axis: usize,
        /// Node-major, `d` components per node, first axis fastest.
        values: Vec<f64>,
        #[serde(default = "default_fd_step")]
        fd_step: f64,
    },
    Scaled {
        lambda: f64,
        inner: Box<DriftSpec>,
    },
    Sum {
        terms: Vec<DriftSpec>,
    },
    /// `inner * 1{|inner| <= m}`.
    Truncated {
        m: f64,
        inner: Box<DriftSpec>,
    },
    /// `c_m * E_eps(1_m inner)`; `m = None` skips the truncation.
    Mollified {
        inner: Box<DriftSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<f64>,
        eps: f64,
        c_m: f64,
    },
    /// `lambda * inner(t, lambda x)`.
    Dilated {
        lambda: f64,
        inner: Box<DriftSpec>,
    },
    /// `e_index * inner_index`: a single component kept as a vector field.
    Projected {
        index: usize,
        inner: Box<DriftSpec>,
    },
    /// `inner(scale t + shift, x)` on the first piece containing `t`, zero
    /// when no piece contains `t`.
    Retimed {
        pieces: Vec<TimePiece>,
        inner: Box<DriftSpec>,
    },
}

/// Closed time window `[start, end]` with the affine map `t -> scale t + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePiece {
    pub start: f64,
    pub end: f64,
    pub scale: f64,
    pub shift: f64,
}

impl TimePiece {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn map(&self, t: f64) -> f64 {
        self.scale * t + self.shift
    }
}

/// Maps `t` through the first matching piece.
pub fn retime(pieces: &[TimePiece], t: f64) -> Option<f64> {
    pieces.iter().find(|p| p.contains(t)).map(|p| p.map(t))
}

fn default_fd_step() -> f64 {
    1e-4
}

/// Scalar factor of `t` multiplying a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum TimeEnvelope {
    Constant {
        value: f64,
    },
    Affine {
        offset: f64,
        slope: f64,
    },
    Cosine {
        mean: f64,
        amplitude: f64,
        omega: f64,
    },
    Step {
        at: f64,
        before: f64,
        after: f64,
    },
}

impl Default for TimeEnvelope {
    fn default() -> Self {
        TimeEnvelope::Constant { value: 1.0 }
    }
}

impl TimeEnvelope {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeEnvelope::Constant { value } => value,
            TimeEnvelope::Affine { offset, slope } => offset + slope * t,
            TimeEnvelope::Cosine {
                mean,
                amplitude,
                omega,
            } => mean + amplitude * (omega * t).cos(),
            TimeEnvelope::Step { at, before, after } => {
                if t < at {
                    before
                } else {
                    after
                }
            }
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, TimeEnvelope::Constant { value } if *value == 1.0)
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            TimeEnvelope::Constant { .. } => true,
            TimeEnvelope::Affine { slope, .. } => slope == 0.0,
            TimeEnvelope::Cosine { amplitude, .. } => amplitude == 0.0,
            TimeEnvelope::Step { before, after, .. } => before == after,
        }
    }

    /// Supremum of `|envelope|` over `[t0, t1]`.
    pub fn sup_abs(&self, t0: f64, t1: f64) -> f64 {
        match *self {
            TimeEnvelope::Constant { value } => value.abs(),
            TimeEnvelope::Affine { offset, slope } => {
                (offset + slope * t0).abs().max((offset + slope * t1).abs())
            }
            TimeEnvelope::Cosine {
                mean, amplitude, ..
            } => mean.abs() + amplitude.abs(),
            TimeEnvelope::Step { at, before, after } => {
                let mut s: f64 = 0.0;
                if t0 < at {
                    s = s.max(before.abs());
                }
                if t1 >= at {
                    s = s.max(after.abs());
                }
                s
            }
        }
    }
}

/// C^2 radial cutoff: one on `[0, R/2]`, quintic transition, zero from `R`.
pub fn cutoff(r: f64, radius: f64) -> f64 {
    let half = 0.5 * radius;
    if r <= half {
        1.0
    } else if r >= radius {
        0.0
    } else {
        let s = (r - half) / half;
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Radial derivative of [`cutoff`].
pub fn cutoff_derivative(r: f64, radius: f64) -> f64 {
    let half = 0.5 * radius;
    if r <= half || r >= radius {
        0.0
    } else {
        let s = (r - half) / half;
        -30.0 * s * s * (1.0 - s) * (1.0 - s) / half
    }
}

/// Rotational structure of a field, used to pick one-dimensional quadratures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Symmetry {
    Zero,
    /// `psi(t, |x|) x / |x|`.
    RadialVector,
    /// `u g(t, |x|)` for a fixed unit vector `u`.
    FixedDirection([f64; MAX_DIM]),
    General,
}

impl Symmetry {
    pub fn is_radial(&self) -> bool {
        !matches!(self, Symmetry::General)
    }

    fn combine(self, other: Symmetry, d: usize) -> Symmetry {
        match (self, other) {
            (Symmetry::Zero, s) | (s, Symmetry::Zero) => s,
            (Symmetry::RadialVector, Symmetry::RadialVector) => Symmetry::RadialVector,
            (Symmetry::FixedDirection(u), Symmetry::FixedDirection(v)) => {
                let dot: f64 = (0..d).map(|k| u[k] * v[k]).sum();
                if (dot.abs() - 1.0).abs() < 1e-12 {
                    Symmetry::FixedDirection(u)
                } else {
                    Symmetry::General
                }
            }
            _ => Symmetry::General,
        }
    }

    /// Reference direction whose component along `e_1` gives the profile.
    pub fn reference(&self, d: usize) -> [f64; MAX_DIM] {
        match self {
            Symmetry::FixedDirection(u) => *u,
            _ => {
                let mut e = [0.0; MAX_DIM];
                if d > 0 {
                    e[0] = 1.0;
                }
                e
            }
        }
    }
}

fn direction_of(v: &[f64]) -> Symmetry {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Symmetry::Zero;
    }
    let mut u = [0.0; MAX_DIM];
    for (k, x) in v.iter().enumerate() {
        u[k] = x / n;
    }
    Symmetry::FixedDirection(u)
}

impl DriftSpec {
    fn atomic(kind: DriftKind, dimension: usize, cutoff_radius: f64) -> Self {
        Self {
            kind,
            dimension,
            cutoff_radius,
            time_envelope: TimeEnvelope::default(),
        }
    }

    pub fn zero(dimension: usize, cutoff_radius: f64) -> Self {
        Self::atomic(DriftKind::Zero, dimension, cutoff_radius)
    }

    pub fn hardy(c: f64, dimension: usize, cutoff_radius: f64) -> Self {
        Self::atomic(DriftKind::HardyAttractor { c }, dimension, cutoff_radius)
    }

    pub fn linear(a: Vec<Vec<f64>>, cutoff_radius: f64) -> Self {
        let d = a.len();
        Self::atomic(DriftKind::Linear { a }, d, cutoff_radius)
    }

    /// `diag * x`.
    pub fn linear_diagonal(diag: f64, dimension: usize, cutoff_radius: f64) -> Self {
        let a = (0..dimension)
            .map(|i| {
                (0..dimension)
                    .map(|j| if i == j { diag } else { 0.0 })
                    .collect()
            })
            .collect();
        Self::linear(a, cutoff_radius)
    }

    pub fn constant(v: Vec<f64>, cutoff_radius: f64) -> Self {
        let d = v.len();
        Self::atomic(DriftKind::Constant { v }, d, cutoff_radius)
    }

    pub fn gaussian(amplitude: Vec<f64>, width: f64, cutoff_radius: f64) -> Self {
        let d = amplitude.len();
        Self::atomic(DriftKind::Gaussian { amplitude, width }, d, cutoff_radius)
    }

    pub fn indicator_ball(radius: f64, v: Vec<f64>, cutoff_radius: f64) -> Self {
        let d = v.len();
        Self::atomic(DriftKind::IndicatorBall { radius, v }, d, cutoff_radius)
    }

    pub fn sampled_grid(
        dimension: usize,
        half_width: f64,
        points_per_axis: usize,
        values: Vec<f64>,
        cutoff_radius: f64,
    ) -> Self {
        Self::atomic(
            DriftKind::SampledGrid {
                half_width,
                points_per_axis,
                values,
                fd_step: default_fd_step(),
            },
            dimension,
            cutoff_radius,
        )
    }

    pub fn scaled(lambda: f64, inner: DriftSpec) -> Self {
        let (d, r) = (inner.dimension, inner.support_radius());
        Self::atomic(
            DriftKind::Scaled {
                lambda,
                inner: Box::new(inner),
            },
            d,
            r,
        )
    }

    pub fn sum(terms: Vec<DriftSpec>) -> Self {
        let d = terms.first().map(|t| t.dimension).unwrap_or(3);
        let r = terms.iter().map(|t| t.support_radius()).fold(0.0, f64::max);
        Self::atomic(DriftKind::Sum { terms }, d, r)
    }

    pub fn truncated(inner: DriftSpec, m: f64) -> Self {
        let (d, r) = (inner.dimension, inner.support_radius());
        Self::atomic(
            DriftKind::Truncated {
                m,
                inner: Box::new(inner),
            },
            d,
            r,
        )
    }

    pub fn mollified(inner: DriftSpec, m: Option<f64>, eps: f64, c_m: f64) -> Self {
        let (d, r) = (inner.dimension, inner.support_radius() + eps);
        Self::atomic(
            DriftKind::Mollified {
                inner: Box::new(inner),
                m,
                eps,
                c_m,
            },
            d,
            r,
        )
    }

    pub fn dilated(inner: DriftSpec, lambda: f64) -> Self {
        let (d, r) = (inner.dimension, inner.support_radius() / lambda);
        Self::atomic(
            DriftKind::Dilated {
                lambda,
                inner: Box::new(inner),
            },
            d,
            r,
        )
    }

    pub fn projected(inner: DriftSpec, index: usize) -> Self {
        let (d, r) = (inner.dimension, inner.support_radius());
        Self::atomic(
            DriftKind::Projected {
                index,
                inner: Box::new(inner),
            },
            d,
            r,
        )
    }

    pub fn retimed(inner: DriftSpec, pieces: Vec<TimePiece>) -> Self {
        let (d, r) = (inner.dimension, inner.support_radius());
        Self::atomic(
            DriftKind::Retimed {
                pieces,
                inner: Box::new(inner),
            },
            d,
            r,
        )
    }

    pub fn with_envelope(mut self, envelope: TimeEnvelope) -> Self {
        self.time_envelope = envelope;
        self
    }

    pub fn is_atomic(&self) -> bool {
        matches!(
            self.kind,
            DriftKind::Zero
                | DriftKind::HardyAttractor { .. }
                | DriftKind::Linear { .. }
                | DriftKind::Constant { .. }
                | DriftKind::Gaussian { .. }
                | DriftKind::IndicatorBall { .. }
                | DriftKind::SampledGrid { .. }
        )
    }

    /// Radius outside of which the field vanishes identically.
    pub fn support_radius(&self) -> f64 {
        match &self.kind {
            DriftKind::Scaled { inner, .. }
            | DriftKind::Truncated { inner, .. }
            | DriftKind::Projected { inner, .. }
            | DriftKind::Retimed { inner, .. } => inner.support_radius(),
            DriftKind::Sum { terms } => {
                terms.iter().map(|t| t.support_radius()).fold(0.0, f64::max)
            }
            DriftKind::Mollified { inner, eps, .. } => inner.support_radius() + eps,
            DriftKind::Dilated { lambda, inner } => inner.support_radius() / lambda.abs(),
            _ => self.cutoff_radius,
        }
    }

    /// Checks parameters recursively.
    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if !(3..=MAX_DIM).contains(&d) {
            return Err(LabError::InvalidArgument(format!(
                "dimension must be in 3..={MAX_DIM}, got {d}"
            )));
        }
        if !(self.cutoff_radius > 0.0 && self.cutoff_radius.is_finite()) {
            return Err(LabError::InvalidArgument(format!(
                "cutoff_radius must be positive and finite, got {}",
                self.cutoff_radius
            )));
        }
        let check_len = |name: &str, v: &[f64]| {
            if v.len() != d {
                Err(LabError::InvalidArgument(format!(
                    "{name} has length {} but dimension is {d}",
                    v.len()
                )))
            } else {
                Ok(())
            }
        };
        let check_inner = |inner: &DriftSpec| -> Result<()> {
            inner.validate()?;
            if inner.dimension != d {
                return Err(LabError::InvalidArgument(format!(
                    "inner dimension {} differs from {d}",
                    inner.dimension
                )));
            }
            Ok(())
        };
        match &self.kind {
            DriftKind::Zero => {}
            DriftKind::HardyAttractor { c } => {
                if !c.is_finite() {
                    return Err(LabError::InvalidArgument("c must be finite".into()));
                }
            }
            DriftKind::Linear { a } => {
                if a.len() != d || a.iter().any(|row| row.len() != d) {
                    return Err(LabError::InvalidArgument(format!("A must be {d}x{d}")));
                }
            }
            DriftKind::Constant { v } => check_len("v", v)?,
            DriftKind::Gaussian { amplitude, width } => {
                check_len("amplitude", amplitude)?;
                if *width <= 0.0 {
                    return Err(LabError::InvalidArgument("width must be positive".into()));
                }
            }
            DriftKind::IndicatorBall { radius, v } => {
                check_len("v", v)?;
                if *radius <= 0.0 {
                    return Err(LabError::InvalidArgument("radius must be positive".into()));
                }
            }
            DriftKind::SampledGrid {
                half_width,
                points_per_axis,
                values,
                fd_step,
            } => {
                if *half_width <= 0.0 || *points_per_axis < 2 || *fd_step <= 0.0 {
                    return Err(LabError::InvalidArgument(
                        "sampled grid needs half_width > 0, points_per_axis >= 2, fd_step > 0"
                            .into(),
                    ));
                }
                let expected = points_per_axis.pow(d as u32) * d;
                if values.len() != expected {
                    return Err(LabError::InvalidArgument(format!(
                        "sampled grid expects {expected} values, got {}",
                        values.len()
                    )));
                }
            }
            DriftKind::Scaled { inner, .. } => check_inner(inner)?,
            DriftKind::Sum { terms } => {
                if terms.is_empty() {
                    return Err(LabError::InvalidArgument(
                        "Sum needs at least one term".into(),
                    ));
                }
                for t in terms {
                    check_inner(t)?;
                }
            }
            DriftKind::Truncated { m, inner } => {
                if *m <= 0.0 {
                    return Err(LabError::InvalidArgument(
                        "truncation level m must be positive".into(),
                    ));
                }
                check_inner(inner)?;
            }
            DriftKind::Mollified { inner, m, eps, c_m } => {
                if *eps <= 0.0 {
                    return Err(LabError::InvalidArgument(
                        "mollifier width eps must be positive".into(),
                    ));
                }
                if let Some(m) = m {
                    if *m <= 0.0 {
                        return Err(LabError::InvalidArgument(
                            "truncation level m must be positive".into(),
                        ));
                    }
                }
                if !(*c_m > 0.0 && *c_m <= 1.0) {
                    return Err(LabError::InvalidArgument(format!(
                        "c_m must lie in (0, 1], got {c_m}"
                    )));
                }
                check_inner(inner)?;
            }
            DriftKind::Dilated { lambda, inner } => {
                if *lambda <= 0.0 {
                    return Err(LabError::InvalidArgument(
                        "dilation factor must be positive".into(),
                    ));
                }
                check_inner(inner)?;
            }
            DriftKind::Retimed { pieces, inner } => {
                if pieces
                    .iter()
                    .any(|p| !(p.start <= p.end && p.scale.is_finite() && p.shift.is_finite()))
                {
                    return Err(LabError::InvalidArgument(
                        "time pieces need start <= end and finite maps".into(),
                    ));
                }
                check_inner(inner)?;
            }
            DriftKind::Projected { index, inner } => {
                if *index >= d {
                    return Err(LabError::InvalidArgument(format!(
                        "projection index {index} out of range"
                    )));
                }
                check_inner(inner)?;
            }
        }
        Ok(())
    }

    pub fn is_time_constant(&self) -> bool {
        if !self.time_envelope.is_constant() {
            return false;
        }
        match &self.kind {
            DriftKind::Scaled { inner, .. }
            | DriftKind::Truncated { inner, .. }
            | DriftKind::Mollified { inner, .. }
            | DriftKind::Dilated { inner, .. }
            | DriftKind::Projected { inner, .. } => inner.is_time_constant(),
            DriftKind::Sum { terms } => terms.iter().all(|t| t.is_time_constant()),
            DriftKind::Retimed { .. } => false,
            _ => true,
        }
    }

    pub fn symmetry(&self) -> Symmetry {
        let d = self.dimension;
        match &self.kind {
            DriftKind::Zero => Symmetry::Zero,
            DriftKind::HardyAttractor { c } => {
                if *c == 0.0 {
                    Symmetry::Zero
                } else {
                    Symmetry::RadialVector
                }
            }
            DriftKind::Linear { a } => {
                let s = a[0][0];
                let scalar =
                    (0..d).all(|i| (0..d).all(|j| a[i][j] == if i == j { s } else { 0.0 }));
                match (scalar, s == 0.0) {
                    (true, true) => Symmetry::Zero,
                    (true, false) => Symmetry::RadialVector,
                    _ => Symmetry::General,
                }
            }
            DriftKind::Constant { v } | DriftKind::IndicatorBall { v, .. } => direction_of(v),
            DriftKind::Gaussian { amplitude, .. } => direction_of(amplitude),
            DriftKind::SampledGrid { .. } => Symmetry::General,
            DriftKind::Scaled { lambda, inner } => {
                if *lambda == 0.0 {
                    Symmetry::Zero
                } else {
                    inner.symmetry()
                }
            }
            DriftKind::Sum { terms } => terms
                .iter()
                .fold(Symmetry::Zero, |acc, t| acc.combine(t.symmetry(), d)),
            DriftKind::Truncated { inner, .. }
            | DriftKind::Mollified { inner, .. }
            | DriftKind::Dilated { inner, .. }
            | DriftKind::Retimed { inner, .. } => inner.symmetry(),
            DriftKind::Projected { index, inner } => match inner.symmetry() {
                Symmetry::Zero => Symmetry::Zero,
                Symmetry::FixedDirection(u) => {
                    if u[*index] == 0.0 {
                        Symmetry::Zero
                    } else {
                        let mut e = [0.0; MAX_DIM];
                        e[*index] = 1.0;
                        Symmetry::FixedDirection(e)
                    }
                }
                _ => Symmetry::General,
            },
        }
    }

    /// Radii at which a radially symmetric field is non-smooth (cutoff
    /// plateau edge, support edge, jumps, singularities).
    pub fn radial_features(&self) -> Vec<f64> {
        let mut out = match &self.kind {
            DriftKind::Zero | DriftKind::SampledGrid { .. } => vec![],
            DriftKind::HardyAttractor { .. }
            | DriftKind::Linear { .. }
            | DriftKind::Constant { .. }
            | DriftKind::Gaussian { .. } => vec![0.5 * self.cutoff_radius, self.cutoff_radius],
            DriftKind::IndicatorBall { radius, .. } => {
                vec![*radius, 0.5 * self.cutoff_radius, self.cutoff_radius]
            }
            DriftKind::Scaled { inner, .. }
            | DriftKind::Projected { inner, .. }
            | DriftKind::Retimed { inner, .. } => inner.radial_features(),
            DriftKind::Sum { terms } => terms.iter().flat_map(|t| t.radial_features()).collect(),
            DriftKind::Truncated { m, inner } => {
                let mut f = inner.radial_features();
                f.extend(level_crossings(inner, *m));
                f
            }
            DriftKind::Mollified { inner, eps, m, .. } => {
                let base = match m {
                    Some(level) => {
                        DriftSpec::truncated((**inner).clone(), *level).radial_features()
                    }
                    None => inner.radial_features(),
                };
                let mut f: Vec<f64> = base.iter().flat_map(|r| [r - eps, *r, r + eps]).collect();
                f.push(inner.support_radius() + eps);
                f
            }
            DriftKind::Dilated { lambda, inner } => {
                inner.radial_features().iter().map(|r| r / lambda).collect()
            }
        };
        out.retain(|r| r.is_finite() && *r > 0.0);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        out
    }

    /// Parses a structured document: JSON when it starts with `{`, TOML otherwise.
    pub fn from_document(text: &str) -> Result<Self> {
        let spec: DriftSpec = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    /// TOML rendering of the spec.
    pub fn to_document(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Parse(e.to_string()))
    }

    /// Stable identifier: FNV-1a of the canonical JSON form.
    pub fn id(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    /// True when the field is bounded and smooth enough for pathwise integration.
    pub fn is_bounded_smooth(&self) -> bool {
        match &self.kind {
            DriftKind::HardyAttractor { c } => *c == 0.0,
            DriftKind::IndicatorBall { .. } | DriftKind::Truncated { .. } => false,
            DriftKind::Mollified { .. } => true,
            DriftKind::Scaled { inner, .. }
            | DriftKind::Dilated { inner, .. }
            | DriftKind::Projected { inner, .. }
            | DriftKind::Retimed { inner, .. } => inner.is_bounded_smooth(),
            DriftKind::Sum { terms } => terms.iter().all(|t| t.is_bounded_smooth()),
            _ => true,
        }
    }
}

fn level_crossings(spec: &DriftSpec, level: f64) -> Vec<f64> {
    if !spec.symmetry().is_radial() || !spec.is_time_constant() {
        return vec![];
    }
    match super::Drift::new(spec) {
        Ok(field) => field.radial_crossings(0.0, level),
        Err(_) => vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_is_c2_and_plateau() {
        let r = 2.0;
        assert_eq!(cutoff(0.99, r), 1.0);
        assert_eq!(cutoff(2.0, r), 0.0);
        let h = 1e-6;
        for &x in &[1.2, 1.5, 1.9] {
            let fd = (cutoff(x + h, r) - cutoff(x - h, r)) / (2.0 * h);
            assert!((fd - cutoff_derivative(x, r)).abs() < 1e-6);
        }
        assert!(cutoff_derivative(1.0 + 1e-9, r).abs() < 1e-12);
    }

    #[test]
    fn spec_roundtrips_through_json_and_toml() {
        let s = DriftSpec::mollified(
            DriftSpec::scaled(2.0, DriftSpec::hardy(0.5, 3, 1.0)),
            Some(10.0),
            0.01,
            0.9,
        )
        .with_envelope(TimeEnvelope::Cosine {
            mean: 1.0,
            amplitude: 0.2,
            omega: 3.0,
        });
        let j = serde_json::to_string(&s).unwrap();
        assert!(j.contains("\"kind\":\"Mollified\""));
        assert!(j.contains("\"c_m\""));
        let back: DriftSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        let toml_src = r#"
            kind = "Linear"
            dimension = 3
            cutoff_radius = 2
            A = [[-1, 0, 0], [0, -1, 0], [0, 0, -1]]
        "#;
        let lin: DriftSpec = toml::from_str(toml_src).unwrap();
        assert_eq!(lin, DriftSpec::linear_diagonal(-1.0, 3, 2.0));
        assert_eq!(lin.symmetry(), Symmetry::RadialVector);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(DriftSpec::hardy(1.0, 2, 1.0).validate().is_err());
        assert!(DriftSpec::constant(vec![1.0, 0.0], 1.0).validate().is_err());
        let mut s = DriftSpec::hardy(1.0, 3, 1.0);
        s.cutoff_radius = -1.0;
        assert!(s.validate().is_err());
        assert!(
            DriftSpec::mollified(DriftSpec::zero(3, 1.0), None, 0.0, 1.0)
                .validate()
                .is_err()
        );
        assert!(DriftSpec::projected(DriftSpec::zero(3, 1.0), 3)
            .validate()
            .is_err());
    }

    #[test]
    fn support_radius_of_composites() {
        let h = DriftSpec::hardy(1.0, 3, 2.0);
        assert_eq!(
            DriftSpec::mollified(h.clone(), None, 0.1, 1.0).support_radius(),
            2.1
        );
        assert_eq!(DriftSpec::dilated(h.clone(), 2.0).support_radius(), 1.0);
        assert_eq!(
            DriftSpec::sum(vec![h, DriftSpec::zero(3, 5.0)]).support_radius(),
            5.0
        );
    }

    #[test]
    fn truncation_features_find_level_radius() {
        let t = DriftSpec::truncated(DriftSpec::hardy(1.0, 3, 1.0), 10.0);
        let f = t.radial_features();
        assert!(f.iter().any(|r| (r - 0.1).abs() < 1e-9), "{f:?}");
    }
}
