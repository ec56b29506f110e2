//! Resolvent kernels, spectral measures, and Schroedinger propagators on
//! hyperbolic space H^{n+1}, with radial-operator discretizations for
//! perturbed Hamiltonians and the matrix systems that arise from
//! linearizing around a ground state.

pub mod error;
pub mod free_kernel;
pub mod matrix_system;
pub mod perturbed;
pub mod propagator;
pub mod quad;
pub mod radial_operator;
pub mod specfun;

pub use error::{Error, Result};
