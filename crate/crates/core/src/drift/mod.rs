//! Drift fields: symbolic specs, compiled evaluators, norms and form-bounds.

mod field;
pub mod formbound;
pub mod norms;
mod spec;

pub use field::{eval_drift, grad_drift, Drift};
pub use formbound::{
    estimate_form_bound, FormBoundReport, Quotient, TestFunction, TestFunctionFamily,
};
pub use norms::{
    ld_norm, morrey_norm, sobolev_constant, sobolev_delta, weak_ld_norm, MorreyReport,
    SobolevReport, WeakNormReport,
};
pub use spec::{
    cutoff, cutoff_derivative, retime, DriftKind, DriftSpec, Symmetry, TimeEnvelope, TimePiece,
};

use crate::error::{LabError, Result};

/// Exact form-bound `(2c/(d-2))^2` of the attracting drift `-c x/|x|^2`.
pub fn hardy_delta(c: f64, d: usize) -> Result<f64> {
    if d < 3 {
        return Err(LabError::InvalidArgument(format!(
            "dimension must be at least 3, got {d}"
        )));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(LabError::InvalidArgument(format!(
            "coefficient must be nonnegative, got {c}"
        )));
    }
    Ok((2.0 * c / (d as f64 - 2.0)).powi(2))
}

/// Hardy coefficient `c = ((d-2)/2) sqrt(delta)` realizing form-bound `delta`.
pub fn hardy_coefficient(delta: f64, d: usize) -> f64 {
    0.5 * (d as f64 - 2.0) * delta.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hardy_delta_examples() {
        assert_eq!(hardy_delta(0.5, 3).unwrap(), 1.0);
        assert_eq!(hardy_delta(0.25, 3).unwrap(), 0.25);
        assert_eq!(hardy_delta(0.0, 5).unwrap(), 0.0);
        assert_eq!(hardy_delta(1.0, 4).unwrap(), 1.0);
        assert!(matches!(
            hardy_delta(1.0, 2),
            Err(LabError::InvalidArgument(_))
        ));
        assert!((hardy_delta(hardy_coefficient(0.3, 5), 5).unwrap() - 0.3).abs() < 1e-15);
    }
}
