//! Benchmark fixtures shared by the criterion benches.

use fbdrift_core::DriftSpec;

/// Mollified Hardy attractor `c_m E_eps(1_m b_c)` with cut-off radius 1.
pub fn mollified_hardy(c: f64, m: f64, eps: f64) -> DriftSpec {
    DriftSpec::mollified(DriftSpec::hardy(c, 3, 1.0), Some(m), eps, 1.0 - 1.0 / m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_bounded_smooth() {
        assert!(mollified_hardy(0.1, 16.0, 1.0 / 256.0).is_bounded_smooth());
    }
}
