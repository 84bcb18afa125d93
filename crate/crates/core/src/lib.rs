//! Multitask diffusion adaptation over graphs with Laplacian regularization.
//!
//! Agents on a weighted graph each estimate their own parameter vector from
//! streaming data, while a graph-Laplacian smoothness penalty pulls
//! neighbouring estimates together. The crate provides
//!
//! * [`graph`]: Laplacian spectra, graph Fourier transform, smoothness;
//! * [`tasks`]: linear-regression tasks, smooth targets, streaming samples;
//! * [`regularized`]: the regularized minimizer, the Pareto limit, the
//!   low-pass filter view and the steady-state bias of the iterates;
//! * [`engine`]: stability gating, the adapt-then-combine recursion, its
//!   long-term linear model and deterministic Monte Carlo averaging;
//! * [`theory`]: closed-form steady-state MSD predictions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod regularized;
pub mod rng;
pub mod tasks;
pub mod theory;

/// Library version, recorded in experiment metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use engine::{check_stability, monte_carlo, run_single, SimConfig, SimResult, StabilityVerdict};
pub use error::{Error, Result};
pub use graph::{build_graph, Graph, StackedSignal};
pub use regularized::{long_term_bias, pareto_solution, solve_regularized, RegularizedSolution};
pub use tasks::{make_smooth_target, Covariance, TaskEnsemble};
pub use theory::TheoryReport;
