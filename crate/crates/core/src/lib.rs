//! Discretization and solvers for an `N`-component reaction-diffusion system whose
//! state is confined to the closed unit ball, approximated either by an exponential
//! penalty or solved directly as a variational inequality.

pub mod audit;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod grid;
pub mod linsolve;
pub mod penalty;
pub mod scenario;
pub mod solver_pen;
pub mod solver_vi;
pub mod trajectory;

pub use audit::{audit_run, DataNorms, EstimateRecord, EstimateReport};
pub use error::{Error, Result};
pub use experiments::{dependence_study, epsilon_study, multiplier_uniqueness_check, uniqueness_study, StudyReport};
pub use expr::Expr;
pub use grid::{Grid, NodalField, ScalarField, VectorField};
pub use linsolve::{cg_solve, CgOptions, CgOutcome, ShiftedOperator};
pub use penalty::PenaltyParams;
pub use scenario::{Problem, Scenario, ScenarioSpec};
pub use solver_pen::{extract_multiplier, pen_run, pen_step, PenRunConfig, PenStep, PenTrajectory};
pub use solver_vi::{recover_multiplier, vi_run, vi_step, MultiplierRecovery, ViRunConfig, ViStep};
pub use trajectory::{StepStats, Trajectory};
