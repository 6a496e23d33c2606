//! Numerical laboratory for the incompressible 3D Euler and 2D Boussinesq
//! equations on a periodic box.

pub mod config;
pub mod criteria;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod gronwall;
pub mod identity;
pub mod interp;
pub mod io;
pub mod pipeline;
pub mod quadrature;
pub mod solver;
pub mod tracers;

pub use error::{Error, Result};
pub use field::{Field, ScalarField, TensorField, VectorField};
pub use config::{GronwallSpec, RunConfig};
pub use grid::GridSpec;
pub use pipeline::{execute, RunOutcome, RunReport};
pub use solver::{FlowState, Integrator, StepperConfig, System};
