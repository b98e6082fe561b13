//! Trust-region sequential quadratic programming for minimizing a stochastic
//! objective under deterministic equality constraints.
//!
//! Each iteration builds random models of the objective from adaptively sized
//! batches, splits the trust region between a normal (feasibility) step and a
//! tangential step, and takes either a gradient step or, when negative
//! curvature dominates, an eigen step along the most negative reduced
//! curvature direction. Second-order runs also try a second-order correction
//! before rejecting a step near the feasible set.
//!
//! The numerical core is generic over the scalar type; the aliases below fix
//! it to `f64`.

pub mod benchmarks;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod problem;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod steps;

pub use error::{Result, SolverError};
pub use estimator::{AccuracyParams, HessianStrategy, Stationarity};
pub use linalg::TrsMethod;
pub use problem::{Constraints, GaussianNoiseSpec, GaussianNoisy, Objective, Problem};
pub use scalar::Real;
pub use solver::{iterate, run, IterationRecord, Outcome, SolverConfig, StopReason};
pub use steps::StepKind;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
pub type SolverState = solver::SolverState<f64>;
pub type RunResult = solver::RunResult<f64>;
pub type TrialStep = steps::TrialStep<f64>;
pub type HessianEstimate = estimator::HessianEstimate<f64>;
pub type NullSpaceBasis = linalg::NullSpaceBasis<f64>;
pub type LogisticProblem = benchmarks::LogisticProblem<f64>;
