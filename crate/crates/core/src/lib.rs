//! Perturbation-based global extremum seeking with double-integrator
//! dynamics: closed-loop simulation, averaged systems driven by locally
//! averaged objective functions, and empirical stability checks.
//!
//! The crate is organized around six pieces:
//!
//! - [`ode`]: deterministic fixed-step / adaptive integration and resampling;
//! - [`quad`]: quadrature engines for periodic, semicircle-kernel, region,
//!   and boundary-flux averages;
//! - [`boundary`]: periodic boundary curves (dither paths) with normals and
//!   anti-derivatives;
//! - [`classical`]: the scalar steady-state output-optimization loop, its
//!   reduced and averaged forms, and the quartic demonstration problem;
//! - [`source`]: planar source seeking with a damped point mass, the
//!   boundary-dither control force, and the averaged heavy-ball system;
//! - [`lyap`]: damped gradient systems, Lyapunov dissipation checks, and an
//!   empirical practical-stability probe;
//! - [`scenario`]: config-driven runs, figure reproduction, sweeps, and the
//!   identity-check battery behind the CLI.

pub mod boundary;
pub mod classical;
pub mod lyap;
pub mod ode;
pub mod quad;
pub mod scenario;
pub mod source;
pub mod vec2;

pub use ode::{
    integrate, integrate_at, resample, IntegratorConfig, OdeError, StepMode, Trajectory,
};
