use serde::{Deserialize, Serialize};

use super::grid::GridSettings;
use super::solver::{solve_terminal, FnSource};
use crate::drift::DriftSpec;
use crate::error::Result;

/// Errors of one resolution in a manufactured-solution study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedRow {
    pub cells: usize,
    pub spacing: f64,
    pub dt: f64,
    /// Largest nodal `|u - u*|` over the stored snapshots.
    pub max_error: f64,
    pub energy_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedReport {
    pub width: f64,
    pub rows: Vec<ManufacturedRow>,
    /// `log2` of successive error ratios (one entry per refinement).
    pub orders: Vec<f64>,
    pub residual_ratios: Vec<f64>,
}

/// Driftless terminal problem with exact solution `u* = (T1 - t) phi(x)`,
/// `phi` a centred Gaussian of the given width, solved at each resolution.
pub fn manufactured_study(
    cells: &[usize],
    half_width: f64,
    width: f64,
    t0: f64,
    t1: f64,
) -> Result<ManufacturedReport> {
    let s2 = width * width;
    let phi = move |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2)).exp();
    let lap = move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        phi(x) * (r2 / (s2 * s2) - x.len() as f64 / s2)
    };
    let src = FnSource(move |t: f64, x: &[f64]| phi(x) - 0.5 * (t1 - t) * lap(x));
    let zero = DriftSpec::zero(3, 1.0);
    let mut rows = vec![];
    for &n in cells {
        let grid = GridSettings::new(3, half_width, n);
        let sol = solve_terminal(&zero, &src, t0, t1, &grid)?;
        let mut err: f64 = 0.0;
        for f in &sol.snapshots {
            let exact = f.geometry.sample(&|x| (t1 - f.time) * phi(x));
            err = f
                .values
                .iter()
                .zip(&exact)
                .fold(err, |m, (a, b)| m.max((a - b).abs()));
        }
        rows.push(ManufacturedRow {
            cells: n,
            spacing: sol.geometry.spacing,
            dt: sol.time_grid.dt,
            max_error: err,
            energy_residual: sol.energy.residual,
        });
    }
    let orders = rows
        .windows(2)
        .map(|w| (w[0].max_error / w[1].max_error).ln() / (w[0].spacing / w[1].spacing).ln())
        .collect();
    let residual_ratios = rows
        .windows(2)
        .map(|w| w[0].energy_residual / w[1].energy_residual)
        .collect();
    Ok(ManufacturedReport {
        width,
        rows,
        orders,
        residual_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_order_on_coarse_grids() {
        let r = manufactured_study(&[12, 24], 2.0, 0.5, 0.0, 0.2).unwrap();
        assert!(r.orders[0] > 1.8, "{r:?}");
        assert!(r.residual_ratios[0] > 3.0, "{r:?}");
        assert!(r.rows[1].max_error < 0.01 * 0.2);
    }
}
