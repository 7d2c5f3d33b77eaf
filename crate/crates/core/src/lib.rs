//! Differentially private sampling from Gaussians with unknown, unbounded
//! mean and covariance, together with the stable estimators it is built
//! from and a harness that checks their stability and utility properties
//! numerically.

pub mod audit;
pub mod data;
pub mod divergences;
pub mod error;
pub mod linalg;
pub mod privacy;
pub mod rng;
pub mod samplers;
pub mod stable;

pub use error::{Error, Result};
