//! Finite-difference solvers for the terminal-value problems of the energy
//! cascade and the cascade verifier itself.

mod cascade;
mod grid;
mod manufactured;
mod solver;

pub use crate::drift::norms::{weighted_norm_rho, Lattice, WeightedNormReport};
pub use cascade::{
    estimate_cascade_bounds, product_estimate_check, run_cascade, CascadeConfig, CascadeConstants,
    CascadeResult, EnergyRatio, ProductEstimateReport, RATIO_TOLERANCE,
};
pub use grid::{FieldSidecar, Geometry, GridField, GridSettings};
pub use manufactured::{manufactured_study, ManufacturedReport, ManufacturedRow};
pub use solver::{
    build_reversed_problem, energy_identity_residual, energy_ledger, solve_initial, solve_terminal,
    stable_dt, ComponentSource, EnergyLedger, FnSource, ReversedSource, Solution, Source, Terms,
    TimeGrid, ZeroSource,
};
