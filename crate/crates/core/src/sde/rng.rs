use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Independent stream of path `path` under `seed`: ChaCha8 keyed by the seed,
/// stream word set to the path index. Draws are consumed step-major, then
/// coordinate, so stored and streamed increments coincide.
pub fn path_stream(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Fills `out` with centered Gaussians of variance `dt`.
#[inline]
pub fn fill_increments(rng: &mut ChaCha8Rng, sqrt_dt: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sqrt_dt * z;
    }
}

/// Stored Brownian increments of shape `(paths, steps, dimension)` on the
/// grid `t_k = k dt`, `k < steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Increments {
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub dimension: usize,
    pub dt: f64,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub checksum: u64,
}

impl Increments {
    pub fn generate(
        seed: u64,
        paths: usize,
        steps: usize,
        dimension: usize,
        dt: f64,
    ) -> Result<Self> {
        if paths == 0 || steps == 0 {
            return Err(LabError::InvalidArgument(
                "need at least one path and one step".into(),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LabError::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let row = steps * dimension;
        paths
            .checked_mul(row)
            .filter(|n| *n <= 1 << 30)
            .ok_or_else(|| LabError::Configuration("increment array too large".into()))?;
        let mut values = vec![0.0; paths * row];
        let sqrt_dt = dt.sqrt();
        values
            .par_chunks_mut(row)
            .enumerate()
            .for_each(|(p, chunk)| {
                let mut rng = path_stream(seed, p as u64);
                fill_increments(&mut rng, sqrt_dt, chunk);
            });
        let checksum = checksum(&values);
        Ok(Self {
            seed,
            paths,
            steps,
            dimension,
            dt,
            values,
            checksum,
        })
    }

    /// Increment of `path` over `[t_k, t_{k+1}]`.
    #[inline]
    pub fn step(&self, path: usize, k: usize) -> &[f64] {
        let d = self.dimension;
        let i = (path * self.steps + k) * d;
        &self.values[i..i + d]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let row = self.steps * self.dimension;
        &self.values[path * row..(path + 1) * row]
    }
}

/// FNV-1a over the bit patterns.
pub fn checksum(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = Increments::generate(7, 3, 50, 3, 0.01).unwrap();
        let b = Increments::generate(7, 3, 50, 3, 0.01).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.checksum, b.checksum);
        assert_ne!(a.path(0), a.path(1));
        let c = Increments::generate(8, 3, 50, 3, 0.01).unwrap();
        assert_ne!(a.checksum, c.checksum);
        let mut rng = path_stream(7, 2);
        let mut row = vec![0.0; 150];
        fill_increments(&mut rng, 0.1, &mut row);
        assert_eq!(row.as_slice(), a.path(2));
    }

    #[test]
    fn increments_have_variance_dt() {
        let inc = Increments::generate(1, 2000, 10, 3, 0.25).unwrap();
        let var = crate::stats::variance(&inc.values);
        let se = 0.25 * (2.0 / inc.values.len() as f64).sqrt();
        assert!((var - 0.25).abs() < 4.0 * se, "{var}");
    }
}
