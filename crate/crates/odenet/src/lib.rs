//! Recover explicit sparse systems of ordinary differential equations from
//! noisy, possibly irregularly sampled time-series data.
//!
//! The main fitting route integrates candidate polynomial-basis models along
//! short trajectory segments and minimizes an L1-regularized trajectory
//! mismatch with hard thresholding, using exact gradients from the forward
//! sensitivity equations. A derivative-based sparse-regression baseline
//! (sequentially thresholded least squares on finite-difference derivatives)
//! is included for controlled comparison, together with reference systems,
//! synthetic data generation, and a command-line front end.

pub mod basis;
pub mod data;
pub mod error;
pub mod integrate;
pub mod model;
pub mod noise;
pub mod sensitivity;
pub mod sindy;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
