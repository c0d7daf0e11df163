//! Numerical laboratory for drift-diffusion operators with a coefficient
//! interface: invariant measures, correctors, flux correctors, effective
//! tensors, transmission data, and convergence-rate experiments, all on
//! matrix-free second-order finite differences.

pub mod coeff;
pub mod error;
pub mod fit;
pub mod grid;
pub mod interp;
pub mod linsolve;
pub mod measure;
pub mod mg;
pub mod mac;
pub mod ops;
pub mod par;

pub use error::{CoreError, Result};
