use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{Geometry, GridField, GridSettings};
use crate::drift::{Drift, DriftSpec, Symmetry, TimePiece};
use crate::error::{LabError, Result};
use crate::MAX_DIM;

/// Scalar source `g(t, x)` sampled at grid nodes.
pub trait Source: Sync {
    fn fill(&self, t: f64, geometry: &Geometry, out: &mut [f64]);

    fn is_zero(&self) -> bool {
        false
    }

    fn is_time_constant(&self) -> bool {
        false
    }
}

pub struct ZeroSource;

impl Source for ZeroSource {
    fn fill(&self, _t: f64, _geometry: &Geometry, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn is_zero(&self) -> bool {
        true
    }

    fn is_time_constant(&self) -> bool {
        true
    }
}

/// Pointwise closure source.
pub struct FnSource<F>(pub F);

impl<F: Fn(f64, &[f64]) -> f64 + Sync> Source for FnSource<F> {
    fn fill(&self, t: f64, geometry: &Geometry, out: &mut [f64]) {
        let v = geometry.sample(&|x| (self.0)(t, x));
        out.copy_from_slice(&v);
    }
}

/// One component of a drift spec used as a scalar field.
pub struct ComponentSource {
    field: Drift,
    component: usize,
}

impl ComponentSource {
    pub fn new(spec: &DriftSpec, component: usize) -> Result<Self> {
        if component >= spec.dimension {
            return Err(LabError::InvalidArgument(format!(
                "component {component} out of range"
            )));
        }
        Ok(Self {
            field: Drift::new(spec)?,
            component,
        })
    }
}

impl Source for ComponentSource {
    fn fill(&self, t: f64, geometry: &Geometry, out: &mut [f64]) {
        let d = geometry.dimension;
        let v = geometry.sample(&|x| {
            let mut b = [0.0; MAX_DIM];
            self.field.eval_into(t, x, &mut b[..d]);
            b[self.component]
        });
        out.copy_from_slice(&v);
    }

    fn is_zero(&self) -> bool {
        self.field.spec().symmetry() == Symmetry::Zero
    }

    fn is_time_constant(&self) -> bool {
        self.field.spec().is_time_constant()
    }
}

/// `G(t) = g1(T1 - t)` on `[0, T1 - T0]`, zero afterwards.
pub struct ReversedSource<'a> {
    pub inner: &'a dyn Source,
    pub t0: f64,
    pub t1: f64,
}

impl Source for ReversedSource<'_> {
    fn fill(&self, t: f64, geometry: &Geometry, out: &mut [f64]) {
        if t <= self.t1 - self.t0 {
            self.inner.fill(self.t1 - t, geometry, out);
        } else {
            out.fill(0.0);
        }
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

/// Coefficient pair `(B, G)` of the forward problem
/// `dU/dt - 1/2 Lap U - B.grad U - G = 0`, `U(0) = 0`, on `[0, T1]`.
pub fn build_reversed_problem<'a>(
    b: &DriftSpec,
    g1: &'a dyn Source,
    t0: f64,
    t1: f64,
) -> Result<(DriftSpec, ReversedSource<'a>)> {
    if t0 > t1 {
        return Err(LabError::InvalidArgument(format!(
            "need T0 <= T1, got {t0} > {t1}"
        )));
    }
    let big_b = if b.is_time_constant() {
        b.clone()
    } else {
        let len = t1 - t0;
        DriftSpec::retimed(
            b.clone(),
            vec![
                TimePiece {
                    start: 0.0,
                    end: len,
                    scale: -1.0,
                    shift: t1,
                },
                TimePiece {
                    start: len,
                    end: t1,
                    scale: 1.0,
                    shift: t0 - t1,
                },
            ],
        )
    };
    Ok((big_b, ReversedSource { inner: g1, t0, t1 }))
}

/// Grid sums of one state: `<u^2>`, `<|grad u|^2>`, `<(b.grad u) u>`, `<g u>`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub mass: f64,
    pub dirichlet: f64,
    pub advection: f64,
    pub source: f64,
}

impl Terms {
    /// `d/dtau (1/2 <u^2>)` predicted by the equation.
    pub fn rate(&self) -> f64 {
        -0.5 * self.dirichlet + self.advection + self.source
    }

    fn add(&mut self, o: &Terms) {
        self.mass += o.mass;
        self.dirichlet += o.dirichlet;
        self.advection += o.advection;
        self.source += o.source;
    }
}

/// Time integrals of the energy identity along a march.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub mass_start: f64,
    pub mass_end: f64,
    /// `int <|grad u|^2>`.
    pub dirichlet: f64,
    /// `int <(b.grad u) u>`.
    pub advection: f64,
    /// `int <g u>`.
    pub source: f64,
    /// `|1/2 <u^2>_end - 1/2 <u^2>_start + 1/2 D - A - S|`.
    pub residual: f64,
}

/// Trapezoid accumulation of [`Terms`] over a sequence of states.
#[derive(Debug, Clone, Default)]
pub(crate) struct LedgerBuilder {
    ledger: EnergyLedger,
    last: Option<Terms>,
}

impl LedgerBuilder {
    pub fn push(&mut self, terms: Terms, dt: f64) {
        match self.last {
            None => self.ledger.mass_start = terms.mass,
            Some(prev) => {
                self.ledger.dirichlet += 0.5 * dt * (prev.dirichlet + terms.dirichlet);
                self.ledger.advection += 0.5 * dt * (prev.advection + terms.advection);
                self.ledger.source += 0.5 * dt * (prev.source + terms.source);
            }
        }
        self.ledger.mass_end = terms.mass;
        self.last = Some(terms);
    }

    /// Replaces the integrand at the last state by its right limit (used
    /// where a coefficient jumps) without changing accumulated integrals.
    pub fn relimit(&mut self, terms: Terms) {
        if self.last.is_some() {
            self.last = Some(terms);
        }
    }

    pub fn finish(self) -> EnergyLedger {
        let mut l = self.ledger;
        l.residual =
            (0.5 * l.mass_end - 0.5 * l.mass_start + 0.5 * l.dirichlet - l.advection - l.source)
                .abs();
        l
    }
}

/// Explicit Euler step with central diffusion and upwind advection.
pub(crate) struct Stepper {
    pub geometry: Geometry,
    strides: [usize; MAX_DIM],
}

impl Stepper {
    pub fn new(geometry: Geometry) -> Self {
        let strides = geometry.strides();
        Self { geometry, strides }
    }

    /// Writes `u + dt (1/2 Lap u + b.grad u + g)` into `out` (zero on the
    /// boundary) and returns the [`Terms`] of `u`. With `dt = 0` only the
    /// terms are meaningful.
    pub fn advance(
        &self,
        u: &[f64],
        b: Option<&[f64]>,
        g: Option<&[f64]>,
        dt: f64,
        out: &mut [f64],
    ) -> (Terms, bool) {
        let geo = &self.geometry;
        let slab = geo.slab();
        let parts: Vec<(Terms, bool)> = out
            .par_chunks_mut(slab)
            .enumerate()
            .map(|(j, chunk)| self.slab(j, u, b, g, dt, chunk))
            .collect();
        let mut total = Terms::default();
        let mut finite = true;
        for (t, ok) in &parts {
            total.add(t);
            finite &= ok;
        }
        let vol = geo.cell_volume();
        total.mass *= vol;
        total.dirichlet *= vol;
        total.advection *= vol;
        total.source *= vol;
        (total, finite)
    }

    fn slab(
        &self,
        j: usize,
        u: &[f64],
        b: Option<&[f64]>,
        g: Option<&[f64]>,
        dt: f64,
        chunk: &mut [f64],
    ) -> (Terms, bool) {
        let geo = &self.geometry;
        let (d, cells) = (geo.dimension, geo.cells);
        let n = cells + 1;
        let mut terms = Terms::default();
        if j == 0 || j == cells {
            chunk.fill(0.0);
            return (terms, true);
        }
        let inv_h = 1.0 / geo.spacing;
        let inv_h2 = inv_h * inv_h;
        let s = &self.strides;
        let base = j * chunk.len();
        let mut finite = true;
        let mut near = [false; MAX_DIM];
        near[d - 1] = j == 1;
        for r in 0..chunk.len() / n {
            let mut rr = r;
            let mut boundary = false;
            for nk in near.iter_mut().take(d - 1).skip(1) {
                let ik = rr % n;
                rr /= n;
                boundary |= ik == 0 || ik == cells;
                *nk = ik == 1;
            }
            let row = &mut chunk[r * n..(r + 1) * n];
            if boundary {
                row.fill(0.0);
                continue;
            }
            row[0] = 0.0;
            row[cells] = 0.0;
            let row0 = base + r * n;
            for i0 in 1..cells {
                let p = row0 + i0;
                let up = u[p];
                let mut lap = 0.0;
                let mut adv = 0.0;
                let mut dir = 0.0;
                near[0] = i0 == 1;
                for k in 0..d {
                    let uf = u[p + s[k]];
                    let ub = u[p - s[k]];
                    lap += uf + ub - 2.0 * up;
                    if let Some(b) = b {
                        let bk = b[p * d + k];
                        adv += if bk > 0.0 {
                            bk * (uf - up)
                        } else {
                            bk * (up - ub)
                        };
                    }
                    dir += (uf - up) * (uf - up);
                    if near[k] {
                        dir += up * up;
                    }
                }
                lap *= inv_h2;
                adv *= inv_h;
                let gv = g.map_or(0.0, |g| g[p]);
                let next = up + dt * (0.5 * lap + adv + gv);
                finite &= next.is_finite();
                row[i0] = next;
                terms.mass += up * up;
                terms.dirichlet += dir * inv_h2;
                terms.advection += up * adv;
                terms.source += gv * up;
            }
        }
        (terms, finite)
    }

    pub fn terms(&self, u: &[f64], b: Option<&[f64]>, g: Option<&[f64]>) -> Terms {
        let mut scratch = vec![0.0; u.len()];
        self.advance(u, b, g, 0.0, &mut scratch).0
    }
}

/// Nodal drift values, refreshed per time for time-dependent fields.
pub(crate) struct DriftNodes {
    field: Option<Drift>,
    constant: bool,
    values: Vec<f64>,
    filled: bool,
}

impl DriftNodes {
    pub fn new(spec: &DriftSpec, geometry: &Geometry) -> Result<Self> {
        if spec.dimension != geometry.dimension {
            return Err(LabError::Configuration(format!(
                "drift dimension {} differs from grid dimension {}",
                spec.dimension, geometry.dimension
            )));
        }
        let zero = spec.symmetry() == Symmetry::Zero;
        Ok(Self {
            field: if zero { None } else { Some(Drift::new(spec)?) },
            constant: spec.is_time_constant(),
            values: if zero {
                vec![]
            } else {
                vec![0.0; geometry.len() * geometry.dimension]
            },
            filled: false,
        })
    }

    pub fn at(&mut self, t: f64, geometry: &Geometry) -> Option<&[f64]> {
        let field = self.field.as_ref()?;
        if !(self.constant && self.filled) {
            fill_drift(field, t, geometry, &mut self.values);
            self.filled = true;
        }
        Some(&self.values)
    }

    /// `(max |b|, max sum_k |b_k|)` over nodes at sampled times in `[a, b]`.
    pub fn speeds(&mut self, a: f64, b: f64, geometry: &Geometry) -> (f64, f64) {
        let d = geometry.dimension;
        let times: Vec<f64> = if self.constant {
            vec![a]
        } else {
            (0..=16).map(|k| a + (b - a) * k as f64 / 16.0).collect()
        };
        let mut out = (0.0f64, 0.0f64);
        for t in times {
            if let Some(v) = self.at(t, geometry) {
                let (e, s) = node_speeds(v, d);
                out.0 = out.0.max(e);
                out.1 = out.1.max(s);
            }
        }
        self.filled &= self.constant;
        out
    }
}

fn node_speeds(v: &[f64], d: usize) -> (f64, f64) {
    v.chunks_exact(d).fold((0.0f64, 0.0f64), |(e, s), b| {
        let n2: f64 = b.iter().map(|x| x * x).sum();
        let l1: f64 = b.iter().map(|x| x.abs()).sum();
        (e.max(n2.sqrt()), s.max(l1))
    })
}

fn fill_drift(field: &Drift, t: f64, geometry: &Geometry, out: &mut [f64]) {
    let d = geometry.dimension;
    let slab = geometry.slab();
    out.par_chunks_mut(slab * d)
        .enumerate()
        .for_each(|(j, chunk)| {
            let mut x = [0.0; MAX_DIM];
            for (i, b) in chunk.chunks_exact_mut(d).enumerate() {
                geometry.point(j * slab + i, &mut x);
                field.eval_into(t, &x[..d], b);
            }
        });
}

/// Largest stable step: diffusion `h^2/(2d)`, advection `h/max|b|` and the
/// monotonicity bound `1/(d/h^2 + max sum|b_k|/h)`, each times `safety`.
pub fn stable_dt(geometry: &Geometry, max_speed: f64, max_l1_speed: f64, safety: f64) -> f64 {
    let h = geometry.spacing;
    let d = geometry.dimension as f64;
    let mut dt = h * h / (2.0 * d);
    if max_speed > 0.0 {
        dt = dt.min(h / max_speed);
    }
    dt = dt.min(1.0 / (d / (h * h) + max_l1_speed / h));
    safety * dt
}

/// Time discretization of a march over an interval of length `length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
    pub stable_dt: f64,
}

pub(crate) fn time_grid(settings: &GridSettings, length: f64, stable: f64) -> Result<TimeGrid> {
    if let Some(dt) = settings.dt {
        if dt > stable {
            return Err(LabError::Configuration(format!(
                "dt = {dt:.3e} exceeds the stability limit {stable:.3e}"
            )));
        }
    }
    let target = settings.dt.unwrap_or(stable);
    if length == 0.0 {
        return Ok(TimeGrid {
            dt: 0.0,
            steps: 0,
            stable_dt: stable,
        });
    }
    let steps = (length / target * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    Ok(TimeGrid {
        dt: length / steps as f64,
        steps,
        stable_dt: stable,
    })
}

/// Snapshot selection: every `stride`-th step and the last one.
pub(crate) fn snapshot_stride(steps: usize, max_snapshots: usize) -> usize {
    steps.div_ceil(max_snapshots - 1).max(1)
}

/// A march of one scalar equation with its stored snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub geometry: Geometry,
    /// Start and end of the march in physical time.
    pub t_start: f64,
    pub t_end: f64,
    pub time_grid: TimeGrid,
    /// States in march order (first is the prescribed data).
    pub snapshots: Vec<GridField>,
    pub energy: EnergyLedger,
    /// Largest boundary-adjacent `|u|` relative to the largest `|u|`.
    pub boundary_leakage: f64,
}

impl Solution {
    pub fn first(&self) -> &GridField {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &GridField {
        self.snapshots.last().unwrap()
    }
}

/// Marches `du/dtau = 1/2 Lap u + b(t).grad u + g(t)`, `u = 0` at `tau = 0`,
/// where `t = t_start + direction * tau`, over `tau in [0, length]`.
fn march(
    b: &DriftSpec,
    g: &dyn Source,
    t_start: f64,
    direction: f64,
    length: f64,
    settings: &GridSettings,
) -> Result<Solution> {
    let geo = settings.geometry()?;
    if !(length >= 0.0 && length.is_finite()) {
        return Err(LabError::InvalidArgument(format!(
            "interval length must be nonnegative, got {length}"
        )));
    }
    let mut drift = DriftNodes::new(b, &geo)?;
    let t_other = t_start + direction * length;
    let (speed, l1) = drift.speeds(t_start.min(t_other), t_start.max(t_other), &geo);
    let tg = time_grid(
        settings,
        length,
        stable_dt(&geo, speed, l1, settings.cfl_safety),
    )?;
    let stepper = Stepper::new(geo.clone());
    let n = geo.len();
    let mut u = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut gv = vec![0.0; n];
    let use_g = !g.is_zero();
    let mut g_filled = false;
    let stride = snapshot_stride(tg.steps, settings.max_snapshots);
    let mut snapshots = vec![GridField::zeros(geo.clone(), t_start)];
    let mut ledger = LedgerBuilder::default();
    let mut leak: f64 = 0.0;
    for j in 0..=tg.steps {
        let t = t_start + direction * j as f64 * tg.dt;
        let bn = drift.at(t, &geo);
        if let Some(bn) = bn {
            let (_, l1_now) = node_speeds(bn, geo.dimension);
            if tg.dt > 0.0
                && tg.dt
                    * (geo.dimension as f64 / (geo.spacing * geo.spacing) + l1_now / geo.spacing)
                    > 1.0
            {
                return Err(LabError::Numerical(format!(
                    "monotonicity bound violated at step {j} (t = {t:.6})"
                )));
            }
        }
        if use_g && !(g.is_time_constant() && g_filled) {
            g.fill(t, &geo, &mut gv);
            g_filled = true;
        }
        let gs = if use_g { Some(gv.as_slice()) } else { None };
        let step_dt = if j < tg.steps { tg.dt } else { 0.0 };
        let (terms, finite) = stepper.advance(&u, bn, gs, step_dt, &mut next);
        ledger.push(terms, tg.dt);
        if j == tg.steps {
            break;
        }
        if !finite {
            return Err(LabError::Numerical(format!(
                "non-finite value at step {} (t = {:.6})",
                j + 1,
                t + direction * tg.dt
            )));
        }
        std::mem::swap(&mut u, &mut next);
        if (j + 1) % stride == 0 || j + 1 == tg.steps {
            let f = GridField {
                geometry: geo.clone(),
                time: t_start + direction * (j + 1) as f64 * tg.dt,
                values: u.clone(),
            };
            let m = f.max_abs();
            if m > 0.0 {
                leak = leak.max(f.boundary_layer_max() / m);
            }
            snapshots.push(f);
        }
    }
    Ok(Solution {
        geometry: geo,
        t_start,
        t_end: t_other,
        time_grid: tg,
        snapshots,
        energy: ledger.finish(),
        boundary_leakage: leak,
    })
}

/// Solves `du/dt + 1/2 Lap u + b.grad u + g = 0` on `[T0, T1]` with
/// `u(T1) = 0` and homogeneous Dirichlet data on the box.
pub fn solve_terminal(
    b: &DriftSpec,
    g: &dyn Source,
    t0: f64,
    t1: f64,
    grid: &GridSettings,
) -> Result<Solution> {
    if t0 > t1 {
        return Err(LabError::InvalidArgument(format!(
            "need T0 <= T1, got {t0} > {t1}"
        )));
    }
    march(b, g, t1, -1.0, t1 - t0, grid)
}

/// Solves `dU/dt - 1/2 Lap U - B.grad U - G = 0` on `[0, T]` with `U(0) = 0`.
pub fn solve_initial(
    big_b: &DriftSpec,
    big_g: &dyn Source,
    t_end: f64,
    grid: &GridSettings,
) -> Result<Solution> {
    march(big_b, big_g, 0.0, 1.0, t_end, grid)
}

/// Energy-identity ledger recomputed from stored snapshots (trapezoid in
/// time between consecutive snapshots, same stencil as the solver).
pub fn energy_ledger(u: &[GridField], b: &DriftSpec, g: &dyn Source) -> Result<EnergyLedger> {
    let Some(first) = u.first() else {
        return Ok(EnergyLedger::default());
    };
    let geo = first.geometry.clone();
    let stepper = Stepper::new(geo.clone());
    let mut drift = DriftNodes::new(b, &geo)?;
    let mut gv = vec![0.0; geo.len()];
    let mut ledger = LedgerBuilder::default();
    let mut prev_t = first.time;
    for f in u {
        if f.geometry != geo {
            return Err(LabError::InvalidArgument(
                "snapshots live on different grids".into(),
            ));
        }
        let gs = if g.is_zero() {
            None
        } else {
            g.fill(f.time, &geo, &mut gv);
            Some(gv.as_slice())
        };
        let terms = stepper.terms(&f.values, drift.at(f.time, &geo), gs);
        ledger.push(terms, (f.time - prev_t).abs());
        prev_t = f.time;
    }
    Ok(ledger.finish())
}

/// `|1/2<u^2(end)> - 1/2<u^2(start)> + 1/2 int<|grad u|^2> - int<(b.grad u)u> - int<gu>|`.
pub fn energy_identity_residual(u: &[GridField], b: &DriftSpec, g: &dyn Source) -> Result<f64> {
    Ok(energy_ledger(u, b, g)?.residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(cells: usize) -> GridSettings {
        GridSettings::new(3, 2.0, cells)
    }

    fn bump(x: &[f64], s: f64) -> f64 {
        (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s * s)).exp()
    }

    #[test]
    fn zero_source_gives_zero() {
        let b = DriftSpec::gaussian(vec![0.5, 0.0, 0.0], 0.4, 1.5);
        let sol = solve_terminal(&b, &ZeroSource, 0.0, 0.1, &settings(12)).unwrap();
        assert!(sol.snapshots.iter().all(|f| f.max_abs() == 0.0));
        assert_eq!(sol.energy.residual, 0.0);
    }

    #[test]
    fn spatially_constant_source_integrates_in_time() {
        let b = DriftSpec::gaussian(vec![0.7, -0.3, 0.2], 0.5, 1.5);
        let src = FnSource(|t: f64, _x: &[f64]| 1.0 + t);
        let sol = solve_terminal(&b, &src, 0.0, 0.05, &settings(16)).unwrap();
        let last = sol.last();
        let g = &last.geometry;
        let c = g.cells / 2;
        let n = g.nodes_per_axis();
        let centre = last.values[c + n * c + n * n * c];
        let tg = sol.time_grid;
        let riemann: f64 = (0..tg.steps)
            .map(|j| tg.dt * (1.0 + 0.05 - j as f64 * tg.dt))
            .sum();
        assert!(tg.steps < g.cells / 2);
        assert!((centre - riemann).abs() < 1e-12, "{centre} {riemann}");
        assert!((centre - 0.05125).abs() < tg.dt * 0.05);
    }

    #[test]
    fn maximum_principle() {
        let b = DriftSpec::gaussian(vec![2.0, 1.0, 0.0], 0.5, 1.8);
        let src = FnSource(|_t: f64, x: &[f64]| bump(x, 0.3));
        let sol = solve_terminal(&b, &src, 0.0, 0.2, &settings(16)).unwrap();
        assert!(sol
            .snapshots
            .iter()
            .all(|f| f.values.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn snapshot_ledger_matches_online_ledger() {
        let b = DriftSpec::gaussian(vec![1.0, 0.0, 0.5], 0.5, 1.8);
        let src = FnSource(|t: f64, x: &[f64]| bump(x, 0.4) * (1.0 + t));
        let mut s = settings(10);
        s.max_snapshots = 10_000;
        let sol = solve_terminal(&b, &src, 0.0, 0.05, &s).unwrap();
        assert_eq!(sol.snapshots.len(), sol.time_grid.steps + 1);
        let l = energy_ledger(&sol.snapshots, &b, &src).unwrap();
        assert!((l.dirichlet - sol.energy.dirichlet).abs() <= 1e-12 * sol.energy.dirichlet);
        assert!((l.residual - sol.energy.residual).abs() <= 1e-12 * sol.energy.dirichlet);
        let mut fine = settings(20);
        fine.max_snapshots = 2;
        let finer = solve_terminal(&b, &src, 0.0, 0.05, &fine).unwrap();
        let ratio = l.residual / finer.energy.residual;
        assert!(
            ratio > 3.0,
            "{} {} {ratio}",
            l.residual,
            finer.energy.residual
        );
    }

    #[test]
    fn rejects_unstable_dt() {
        let mut s = settings(16);
        s.dt = Some(1.0);
        let r = solve_terminal(&DriftSpec::zero(3, 1.0), &ZeroSource, 0.0, 0.1, &s);
        assert!(matches!(r, Err(LabError::Configuration(_))));
    }

    #[test]
    fn reversed_coefficients() {
        let b = DriftSpec::gaussian(vec![1.0, 0.0, 0.0], 0.5, 1.5);
        let (bb, _) = build_reversed_problem(&b, &ZeroSource, 0.2, 1.0).unwrap();
        assert_eq!(bb, b);

        let bt = b.clone().with_envelope(crate::TimeEnvelope::Affine {
            offset: 1.0,
            slope: 2.0,
        });
        let (bb, _) = build_reversed_problem(&bt, &ZeroSource, 0.2, 1.0).unwrap();
        let x = [0.1, 0.2, 0.0];
        let at = |s: &DriftSpec, t: f64| crate::eval_drift(s, t, &x).unwrap()[0];
        assert_eq!(at(&bb, 0.3), at(&bt, 0.7));
        assert_eq!(at(&bb, 0.9), at(&bt, 0.1));

        let src = FnSource(|t: f64, _x: &[f64]| if (0.2..=1.0).contains(&t) { 1.0 } else { 0.0 });
        let (_, gg) = build_reversed_problem(&b, &src, 0.2, 1.0).unwrap();
        let geo = Geometry::new(3, 1.0, 2);
        let mut out = vec![0.0; geo.len()];
        gg.fill(0.5, &geo, &mut out);
        assert!(out.iter().all(|&v| v == 1.0));
        gg.fill(0.85, &geo, &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_and_terminal_formulations_agree() {
        let b = DriftSpec::gaussian(vec![1.0, 0.5, 0.0], 0.5, 1.5).with_envelope(
            crate::TimeEnvelope::Affine {
                offset: 1.0,
                slope: -0.5,
            },
        );
        let src = FnSource(|t: f64, x: &[f64]| bump(x, 0.3) * (1.0 + t));
        let mut s = settings(12);
        s.dt = Some(2e-3);
        s.max_snapshots = 1000;
        let u1 = solve_terminal(&b, &src, 0.0, 0.1, &s).unwrap();
        let (bb, gg) = build_reversed_problem(&b, &src, 0.0, 0.1).unwrap();
        let big_u = solve_initial(&bb, &gg, 0.1, &s).unwrap();
        assert_eq!(u1.snapshots.len(), big_u.snapshots.len());
        for (a, c) in u1.snapshots.iter().zip(&big_u.snapshots) {
            assert!((a.time - (0.1 - c.time)).abs() < 1e-12);
            let gap = a
                .values
                .iter()
                .zip(&c.values)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(gap <= 1e-12 * a.max_abs().max(1e-300), "{gap}");
        }
    }
}
