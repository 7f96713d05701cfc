//! Tomography of matrix product operator (MPO) states from informationally
//! complete POVM measurements.
//!
//! - [`tt`]: tensor-train / MPO arithmetic, TT-SVD and rounding.
//! - [`povm`]: SIC and product POVMs, design checks, measurement maps.
//! - [`sampler`]: seeded finite-shot measurement simulation.
//! - [`estimator`]: projected (stochastic) gradient descent recovery.
//! - [`statesim`]: random MPDO ground truths and reference states.

pub mod error;
pub mod estimator;
mod linalg;
pub mod povm;
pub mod sampler;
pub mod statesim;
pub mod tt;

pub use error::{Result, TomoError};

pub type C64 = num_complex::Complex64;

/// Crate version embedded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
