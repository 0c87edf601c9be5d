//! Sequential detection of rank-one covariance changes.
//!
//! The crate covers the full pipeline for detecting an emerging (or switching)
//! rank-one spike in the covariance of a Gaussian stream:
//!
//! - [`model`]: spiked-covariance laws, stream sampling and the projection that
//!   turns a switching-subspace change into an emerging one.
//! - [`eigen`]: the forward sliding-window scatter matrix and its top
//!   eigenvector.
//! - [`detectors`]: exact CUSUM, Subspace-CUSUM and the largest-eigenvalue
//!   baseline as online state machines.
//! - [`tuning`]: drift bounds, the MGF root for the ARL tilt, and the first-order
//!   optimal window/drift.
//! - [`montecarlo`]: ARL/EDD estimation, threshold calibration and procedure
//!   comparisons.

pub mod detectors;
pub mod eigen;
mod error;
pub mod format;
pub mod model;
pub mod montecarlo;
pub mod tuning;

pub use error::{Error, Result};
