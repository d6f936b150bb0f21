//! Solver library for Markowitz-optimal deterministic trade-execution
//! trajectories under a geometric Brownian price model with permanent and
//! temporary market impact.
//!
//! The pipeline: [`variational::solve_f1`] shoots the risk-neutral
//! Euler-Lagrange boundary value problem, [`perturbation::solve_f2`] adds the
//! risk-aversion correction on a sine basis, [`moments`] evaluates the
//! mean-variance objective by nested quadrature, and [`simulate`] verifies
//! moments and the pathwise product identity by Monte Carlo. [`baseline`]
//! supplies the Almgren-Chriss benchmark for comparisons.
//!
//! ```
//! use exec_traj::{ImpactSpec, MarketParams, ExecutionProblem, ShootingConfig};
//! use exec_traj::{solve_f1, solve_f2, objective};
//!
//! let impact = ImpactSpec::linear(1.0, 1.0)?;            // alpha, eta
//! let market = MarketParams::new(1.0, 0.2)?;             // s, sigma
//! let problem = ExecutionProblem::new(3.0, 1.0, 1.0)?;   // K, T, lambda
//!
//! let cfg = ShootingConfig { ode_steps: 1000, ..ShootingConfig::default() };
//! let (f1, base) = solve_f1(&impact, &market, &problem, &cfg)?;
//! assert!(base.converged && base.boundary_error < 1e-9);
//!
//! let (f, report) = solve_f2(&impact, &market, &problem, &f1, 4)?;
//! let value = objective(&impact, &market, &problem, &f)?;
//! assert!(value.j < objective(&impact, &market, &problem, &f1)?.j + 1e-12);
//! # Ok::<(), exec_traj::Error>(())
//! ```

// index-based loops are the clearer idiom in the dense numeric kernels
#![allow(clippy::needless_range_loop)]

pub mod baseline;
pub mod commands;
pub mod config;
pub mod error;
pub mod model;
pub mod moments;
pub mod perturbation;
pub mod quad;
pub mod simulate;
pub mod variational;

pub use error::{Error, Result};
pub use model::{
    eval_f, eval_f_partials, eval_impact, ExecutionProblem, ImpactKind, ImpactSpec, MarketParams,
    PermanentImpact, TemporaryImpact, Trajectory,
};
pub use moments::{mean_xi, objective, objective_integral_form, second_moment_xi, xi_moments};
pub use variational::{el_residual, solve_f1, ShootingConfig, SolverReport};
pub use perturbation::{first_variation, solve_f2, optimality_residual};
