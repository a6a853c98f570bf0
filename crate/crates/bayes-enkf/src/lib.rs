//! Sequential Bayesian state and parameter estimation inside the ensemble
//! Kalman filter: grid-based and normal parameter posteriors, the
//! conjugate inverse-gamma variance component, exact Kalman-filter
//! oracles, a Liu-West particle filter baseline, and config-driven twin
//! experiments on three testbeds.

pub mod covariance;
pub mod enkf;
pub mod error;
pub mod linalg;
pub mod models;
pub mod posterior;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
