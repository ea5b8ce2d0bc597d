//! Random walks in random environment on Z^d.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod criteria;
pub mod environment;
pub mod error;
pub mod exit_stats;
pub mod hashing;
pub mod lattice;
pub mod llt;
pub mod multiscale;
pub mod region;
pub mod regeneration;
pub mod replicas;
pub mod scalar;
pub mod scales;
pub mod solver;
pub mod stats;
pub mod walk;

pub use environment::{
    apply_trap, build_environment, Ensemble, Environment, EnvironmentModel, Kernel, KernelField,
    ModelDescription, TrapMixture, TrapOverlay, Variant,
};
pub use error::{Error, Result};
pub use lattice::{Direction, Site};
pub use region::{Region, Side, Transversal};
pub use scales::{build_ladder, scale_r, LadderMode, LadderParams, ScaleLadder};
pub use solver::{
    conditional_exit_stats, harmonic_fields, rho_of_box, solve_exit, solve_exit_sparse, ExitSolution,
    ExitSolution32, ExitSolution64, Method, SolveOptions,
};
pub use scalar::Real;
pub use llt::{convolve_power, llt_discrepancy_report, LatticeLaw, LatticeLaw32, LatticeLaw64};
