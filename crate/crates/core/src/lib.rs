//! Supervised-learning online tracking filter.
//!
//! The crate is split along the data flow of the filter:
//!
//! - [`simkit`] generates constant-velocity ground truth and noisy measurements.
//! - [`preprocess`] turns measurement tracks into fixed-length, rotation- and
//!   translation-normalized feature vectors with rotated-error targets.
//! - [`gbt`] is an exact-greedy, second-order gradient-boosted tree trainer with
//!   learned default directions for missing features.
//! - [`kalman`] is the linear-Gaussian baseline for the same motion model.
//! - [`slf`] ties preprocessing and boosting together into a trainable filter.
//! - [`bench`] runs Monte Carlo comparisons and writes result files.

pub mod bench;
pub mod gbt;
pub mod kalman;
pub mod preprocess;
pub mod simkit;
pub mod slf;

/// Planar vector used for positions, displacements and errors.
pub type Vec2 = nalgebra::Vector2<f64>;
