//! Linear-response estimation for ergodic diffusions on periodic domains.
//!
//! This crate estimates the sensitivity of steady-state averages to small
//! forcing perturbations: for an SDE on the unit torus with drift `b`,
//! diffusion `sigma`, and a perturbation direction `F`, it computes the
//! derivative of the stationary average of an observable with respect to the
//! perturbation strength, at zero strength.  Two ingredients are provided:
//!
//! * Monte Carlo estimators built from likelihood-ratio weights accumulated
//!   along discretized trajectories, with bias of first or second order in
//!   the step size, plus a scheme-agnostic construction that derives the
//!   second-order correction terms from moment conditions;
//! * an independent spectral reference solver (Fourier collocation for the
//!   stationary density and the associated Poisson equation) used to obtain
//!   ground-truth values and to cross-check the estimators.
//!
//! The numeric scalar type is generic (`f32` or `f64`) via [`scalar::Real`];
//! concrete `f64` aliases are re-exported at the crate root for convenience.

pub mod error;
pub mod estimators;
pub mod general2;
pub mod harness;
pub mod integrators;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod torus;

pub use error::{Error, Result, ValidationFailure, ValidationReport};
pub use scalar::Real;

/// Concrete `f64` problem definition.
pub type Problem64 = model::Problem<f64>;
/// Concrete `f32` problem definition.
pub type Problem32 = model::Problem<f32>;
/// Concrete `f64` per-replica result.
pub type ReplicaResult64 = estimators::ReplicaResult<f64>;
/// Concrete `f64` estimate summary.
pub type EstimateSummary64 = estimators::EstimateSummary<f64>;
/// Concrete `f64` centering policy.
pub type Centering64 = estimators::Centering<f64>;
/// Concrete `f64` spectral reference solution.
pub type ReferenceSolution64 = oracle::ReferenceSolution<f64>;
