//! Finite-volume laboratory for ionic electrodiffusion in an incompressible fluid.
//!
//! The crate is organized around six layers:
//! - [`grid`]: uniform cell-centered meshes, fields, boundary data, discrete operators
//! - [`elliptic`]: symmetric positive definite solves (screened Poisson, Poisson)
//! - [`pb`]: nonlinear equilibrium problems for the electric potential
//! - [`npns`]: coupled transport/fluid time stepping
//! - [`diagnostics`]: norms, monitors, and decay-rate fitting
//! - [`cli`]: experiment configs, run orchestration, CSV/SVG output, invariant checks

pub mod cli;
pub mod diagnostics;
pub mod elliptic;
pub mod grid;
pub mod npns;
pub mod pb;
