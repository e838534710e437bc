//! Simulation and verification toolkit for stochastic inertial gradient dynamics.

// `!(x > 0.0)` deliberately rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod problems;
pub mod quadrature;
pub mod scenario;
pub mod schedules;
pub mod sde;
mod solvers;
pub mod tikhonov;
pub mod transform;

pub use error::{Error, Result};

/// Dense state vector.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix.
pub type Matrix = nalgebra::DMatrix<f64>;
