//! Rao-Blackwellized sequential Monte Carlo for conditionally
//! linear-Gaussian state-space models.

pub mod armodel;
pub mod error;
pub mod estimator;
pub mod io;
pub mod lgss;
pub mod linalg;
pub mod rng;
pub mod scenario;
pub mod smc;
pub mod surrogate;

pub use error::{Error, Result};
