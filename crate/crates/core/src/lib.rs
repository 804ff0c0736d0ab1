//! Numerical laboratory for form-bounded drifts: drift families and their
//! norms, mollified approximation sequences, parabolic energy cascades on
//! grids, and Euler-Maruyama ensembles with flow statistics.

pub mod drift;
pub mod error;
pub mod mollifier;
pub mod pde;
pub mod quadrature;
pub mod sde;
pub mod stats;

pub use drift::{eval_drift, grad_drift, hardy_delta, Drift, DriftKind, DriftSpec, TimeEnvelope};
pub use error::{LabError, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 8;
