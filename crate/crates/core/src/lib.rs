//! Solvers for variational and optimal-control problems with two time
//! delays: one lag in the state, a second (smaller) lag in the
//! derivative and running cost.
//!
//! The pieces fit together as follows. A [`grid::DelayGrid`] encodes
//! both delays as exact index shifts on a commensurate mesh. A
//! [`trajectory::Trajectory`] holds the discrete state with history and
//! endpoint pinned, so the first-order machinery in [`variational`]
//! can treat delayed evaluations as plain lookups. [`descent`]
//! minimizes the discretized functional over the free nodes, and
//! [`penalty`] wraps that in the exterior-penalty outer loop for
//! linear delayed control systems. [`oracle`] supplies the independent
//! ground truth (method-of-steps integration, a direct KKT solve and
//! finite-difference gradients) used by the verification suites.

pub mod descent;
pub mod error;
pub mod grid;
pub mod lagrangian;
pub mod oracle;
pub mod penalty;
pub mod rational;
pub mod trajectory;
pub mod variational;

pub use descent::{line_search, minimize, InnerOptions, InnerReport, Objective};
pub use error::{Error, Result};
pub use grid::{build_grid, DelayGrid, DelaySelector};
pub use lagrangian::{
    eval_lagrangian, eval_partials, make_penalized, ControlPartials, CostPartials,
    DelayedLagrangian, FiniteDifferencePartials, Partials, PenalizedLagrangian,
    QuadraticCostSpec, QuadraticLagrangian, RunningCost,
};
pub use oracle::{fd_gradient, integrate_mos, lq_direct_solve, KktSolution};
pub use penalty::{
    cost_value, dyn_residual_norm, dynamics_defect, solve_control_problem, stationarity_diagnostics,
    ControlObjective, ControlProblem, PenaltyConfig, PenaltyReport, StageDiagnostics,
    StationarityDiagnostics,
};
pub use rational::{format_rat, parse_rat, rat_from_f64, Rat};
pub use trajectory::{
    ControlPath, DelayedTuple, HistorySpec, InitMode, PolyPiece, TangentVector, Trajectory,
};
pub use variational::{
    el_residual, functional_value, gradient, project_tangent, ElResidual, VariationalObjective,
    VariationalProblem,
};
