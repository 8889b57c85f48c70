//! Simulation and calculus for Volterra processes through the two-time field
//! Θ^t_s, the part of X_s already determined by the noise up to time t.
//!
//! Modules follow the pipeline: kernels and coefficients, path simulation and
//! the Θ field, Gaussian closed forms, finite-difference path derivatives and
//! the functional Itô check, a regression BSDE solver, rough volatility models,
//! and empirical diagnostics.

pub mod bsde;
pub mod diagnostics;
pub mod fito;
pub mod gauss;
pub mod io;
pub mod kernel;
pub mod path;
pub mod quadrature;
pub mod rng;
pub mod roughvol;
pub mod simulate;
pub mod special;
pub mod stats;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
