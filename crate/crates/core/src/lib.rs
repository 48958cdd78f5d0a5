//! Fully discrete Euler–Maruyama / Taylor–Hood mixed finite elements for the
//! time-dependent Stokes equations driven by multiplicative Q-Wiener noise.

pub mod assembly;
pub mod config;
pub mod error;
pub mod experiment;
pub mod femspace;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod saddle;
pub mod sparse;
pub mod rng;
pub mod stepper;
pub mod stochastic;

pub use error::{Result, StokesError};
