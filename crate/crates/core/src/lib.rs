//! Stochastic fluid models on the two-torus and the Lagrangian diagnostics
//! built on them: Lyapunov exponents of the tracer flow, moment Lyapunov
//! exponents, and passive-scalar mixing rates.

pub mod dynamics;
pub mod error;
pub mod exponents;
pub mod lagrangian;
pub mod mixing;
pub mod nonlinear;
pub mod rng;
pub mod spectral;
pub mod tower;

pub use error::{Error, Result};
