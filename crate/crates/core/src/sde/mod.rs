//! Euler-Maruyama ensembles for mollified drifts, flow and Malliavin
//! derivatives, occupation functionals and coupled regularity studies.

pub mod convergence;
pub mod criticality;
pub mod ensemble;
pub mod flow;
pub mod krylov;
pub mod regularity;
pub mod rng;

pub use convergence::{convergence_study, ConvergenceConfig, ConvergenceReport, LevelPair};
pub use criticality::{criticality_sweep, CriticalityConfig, CriticalityReport, CriticalityRow};
pub use ensemble::{
    grid_index, simulate_coupled, simulate_ensemble, variation_scale, EnsembleSettings,
    EnsembleSidecar, PathEnsemble, StartSpec, StepCheck,
};
pub use flow::{
    flow_norm_statistics, malliavin_derivative, variational_flow, DecayCurve, FlowEnsemble,
    FlowNormReport, MalliavinSlice,
};
pub use krylov::{
    admissible_q, chi3_cdf, composite_norm, krylov_functional, krylov_g_functional, KrylovReport,
    TestFn,
};
pub use regularity::{
    regularity_statistics, CoupledEnsembles, ModulusRow, RegularityConfig, RegularityReport,
};
pub use rng::{path_stream, Increments};
