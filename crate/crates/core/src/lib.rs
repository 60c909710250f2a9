//! Recovery of a reference reflectivity signal from multiple linearly
//! measured views that were deformed in a partly known way and scrambled by
//! unknown permutations.
//!
//! The unknown permutations are relaxed to transport plans between
//! reflectivity marginals, regularized by the squared distance the plan moves
//! mass across the pixel grid. Recovery alternates gradient steps on the
//! per-view estimates and the shared prototype, re-solving the transport
//! problem at every step. The crate also ships exact and proximal-point
//! transport solvers, two baselines, a synthetic data generator, and a sweep
//! harness for NMSE experiments.

mod error;
pub mod baselines;
pub mod grid;
pub mod marginal;
pub mod metrics;
pub mod ot;
pub mod recovery;
pub mod seeds;
pub mod selftest;
pub mod signal;
pub mod sweep;
pub mod synthdata;
pub mod view;

pub use error::{Error, Result};
pub use grid::Grid;
pub use marginal::{
    marginal_for_support_size, reflectivity_marginal, threshold_for_support, Marginal,
};
pub use metrics::{nmse, noise_for_snr, realized_snr_db, NOISELESS_SNR_DB};
pub use ot::{
    build_cost_matrix, ot_distance, permutation_cost, solve_exact, solve_ipot, solve_ot,
    CostMatrix, IpotParams, SolverKind, TransportPlan, PLAN_FEASIBILITY_TOL,
};
pub use baselines::{
    baseline_gradient, baseline_ignore_p, descend_relaxed_alignment, diagonal_mass_fraction,
    BaselineConfig,
};
pub use recovery::{
    default_prototype_init, estimate_prototype, estimate_view, grad_x, grad_xi, objective,
    recover, RecoveryConfig, RecoveryState,
};
pub use selftest::{
    brute_force_uniform_ot, check_exact_against_brute_force, check_gradients,
    check_ipot_against_exact, check_local_permutation_displacements, check_plan_feasibility,
};
pub use sweep::{
    emit_report, load_config, run_method, run_sweep, AggregateRow, Method, RecoveryTuning,
    SweepConfig, SweepRecord, SweepResult, RECORDS_HEADER, SUMMARY_HEADER,
};
pub use synthdata::{
    build_instance, make_deformation, make_local_permutation, make_measurement, make_scene,
    Instance, InstanceMetadata, Letter, Measurement, PerturbSpec, SceneSpec, INSTANCE_SCHEMA,
};
pub use signal::{Signal, SupportSet};
pub use view::{DeformationOp, LinearMeasurementOp, ViewData};
