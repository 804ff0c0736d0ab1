use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::MAX_DIM;

/// Box, resolution and time-step settings of a grid solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub dimension: usize,
    /// Box `[-half_width, half_width]^d`.
    pub half_width: f64,
    /// Cells per axis; the grid has `cells + 1` nodes per axis.
    pub cells: usize,
    /// Fixed time step; `None` picks the largest stable step times `cfl_safety`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    /// Upper bound on stored snapshots (first and last always kept).
    #[serde(default = "default_snapshots")]
    pub max_snapshots: usize,
}

fn default_safety() -> f64 {
    0.9
}

fn default_snapshots() -> usize {
    33
}

impl GridSettings {
    pub fn new(dimension: usize, half_width: f64, cells: usize) -> Self {
        Self {
            dimension,
            half_width,
            cells,
            dt: None,
            cfl_safety: default_safety(),
            max_snapshots: default_snapshots(),
        }
    }

    /// Half-width `R + safety sqrt(2 length)` covering the diffusive spread.
    pub fn suggested_half_width(support_radius: f64, length: f64, safety: f64) -> f64 {
        support_radius + safety * (2.0 * length).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(3..=MAX_DIM).contains(&self.dimension) {
            return Err(LabError::Configuration(format!(
                "dimension must be in 3..={MAX_DIM}, got {}",
                self.dimension
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(LabError::Configuration(
                "box half-width must be positive".into(),
            ));
        }
        if self.cells < 2 {
            return Err(LabError::Configuration(
                "need at least 2 cells per axis".into(),
            ));
        }
        if (self.cells + 1)
            .checked_pow(self.dimension as u32)
            .is_none_or(|n| n > 1 << 28)
        {
            return Err(LabError::Configuration("grid too large".into()));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(LabError::Configuration(
                "cfl_safety must lie in (0, 1]".into(),
            ));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(LabError::Configuration("dt must be positive".into()));
            }
        }
        if self.max_snapshots < 2 {
            return Err(LabError::Configuration(
                "max_snapshots must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        self.validate()?;
        Ok(Geometry::new(self.dimension, self.half_width, self.cells))
    }
}

/// Node layout of `[-L, L]^d` with `cells + 1` nodes per axis, first axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dimension: usize,
    pub half_width: f64,
    pub cells: usize,
    pub spacing: f64,
}

impl Geometry {
    pub fn new(dimension: usize, half_width: f64, cells: usize) -> Self {
        Self {
            dimension,
            half_width,
            cells,
            spacing: 2.0 * half_width / cells as f64,
        }
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn len(&self) -> usize {
        self.nodes_per_axis().pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0; MAX_DIM];
        let mut acc = 1;
        for k in 0..self.dimension {
            s[k] = acc;
            acc *= self.nodes_per_axis();
        }
        s
    }

    /// Number of nodes in one slab of fixed last-axis index.
    pub fn slab(&self) -> usize {
        self.len() / self.nodes_per_axis()
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dimension as i32)
    }

    pub fn multi_index(&self, mut flat: usize, idx: &mut [usize]) {
        let n = self.nodes_per_axis();
        for v in idx[..self.dimension].iter_mut() {
            *v = flat % n;
            flat /= n;
        }
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    pub fn point(&self, flat: usize, x: &mut [f64]) {
        let mut idx = [0; MAX_DIM];
        self.multi_index(flat, &mut idx);
        for k in 0..self.dimension {
            x[k] = self.coordinate(idx[k]);
        }
    }

    pub fn is_boundary(&self, idx: &[usize]) -> bool {
        idx[..self.dimension]
            .iter()
            .any(|&i| i == 0 || i == self.cells)
    }

    /// Nodal values of `f` (parallel over slabs).
    pub fn sample(&self, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
        use rayon::prelude::*;
        let d = self.dimension;
        let slab = self.slab();
        let mut out = vec![0.0; self.len()];
        out.par_chunks_mut(slab).enumerate().for_each(|(j, chunk)| {
            let mut x = [0.0; MAX_DIM];
            for (i, v) in chunk.iter_mut().enumerate() {
                self.point(j * slab + i, &mut x);
                *v = f(&x[..d]);
            }
        });
        out
    }
}

/// Scalar nodal values on a [`Geometry`] at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub geometry: Geometry,
    pub time: f64,
    pub values: Vec<f64>,
}

/// JSON sidecar written next to an exported binary field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub shape: Vec<usize>,
    pub box_half_width: f64,
    pub spacing: f64,
    pub time: f64,
    pub dtype: String,
    pub order: String,
}

impl GridField {
    pub fn new(geometry: Geometry, time: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(LabError::InvalidArgument(format!(
                "grid expects {} values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::Numerical(format!("non-finite value at node {i}")));
        }
        Ok(Self {
            geometry,
            time,
            values,
        })
    }

    pub fn zeros(geometry: Geometry, time: f64) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            time,
            values: vec![0.0; n],
        }
    }

    /// `<u^2>` by the nodal (trapezoid, zero boundary) rule.
    pub fn mass(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.geometry.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|u|` on nodes adjacent to the boundary.
    pub fn boundary_layer_max(&self) -> f64 {
        let g = &self.geometry;
        let mut idx = [0; MAX_DIM];
        let mut best: f64 = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            g.multi_index(i, &mut idx);
            if idx[..g.dimension]
                .iter()
                .any(|&k| k == 1 || k + 1 == g.cells)
                && !g.is_boundary(&idx)
            {
                best = best.max(v.abs());
            }
        }
        best
    }

    pub fn sidecar(&self) -> FieldSidecar {
        FieldSidecar {
            shape: vec![self.geometry.nodes_per_axis(); self.geometry.dimension],
            box_half_width: self.geometry.half_width,
            spacing: self.geometry.spacing,
            time: self.time,
            dtype: "f64-le".into(),
            order: "first-axis-fastest".into(),
        }
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(io)?;
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(format!("{stem}.bin")), bytes).map_err(io)?;
        let json = serde_json::to_string_pretty(&self.sidecar())
            .map_err(|e| LabError::Io(e.to_string()))?;
        fs::write(dir.join(format!("{stem}.json")), json).map_err(io)
    }

    pub fn import(dir: &Path, stem: &str) -> Result<Self> {
        let text = fs::read_to_string(dir.join(format!("{stem}.json"))).map_err(io)?;
        let car: FieldSidecar =
            serde_json::from_str(&text).map_err(|e| LabError::Parse(e.to_string()))?;
        let bytes = fs::read(dir.join(format!("{stem}.bin"))).map_err(io)?;
        if bytes.len() % 8 != 0 || car.shape.is_empty() {
            return Err(LabError::Parse("malformed field export".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let geometry = Geometry::new(car.shape.len(), car.box_half_width, car.shape[0] - 1);
        Self::new(geometry, car.time, values)
    }
}

fn io(e: std::io::Error) -> LabError {
    LabError::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_layout() {
        let g = Geometry::new(3, 1.0, 4);
        assert_eq!(g.len(), 125);
        assert_eq!(g.spacing, 0.5);
        let mut x = [0.0; 3];
        g.point(1 + 5 * 2 + 25 * 4, &mut x);
        assert_eq!(x, [-0.5, 0.0, 1.0]);
        assert_eq!(g.slab(), 25);
    }

    #[test]
    fn export_roundtrip() {
        let g = Geometry::new(3, 2.0, 3);
        let values = g.sample(&|x| x[0] + 2.0 * x[1] - x[2]);
        let f = GridField::new(g, 0.25, values).unwrap();
        let dir = std::env::temp_dir().join(format!("grid-export-{}", std::process::id()));
        f.export(&dir, "u").unwrap();
        let back = GridField::import(&dir, "u").unwrap();
        assert_eq!(back, f);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn rejects_non_finite() {
        let g = Geometry::new(3, 1.0, 2);
        let mut v = vec![0.0; g.len()];
        v[3] = f64::NAN;
        assert!(matches!(
            GridField::new(g, 0.0, v),
            Err(LabError::Numerical(_))
        ));
    }
}
