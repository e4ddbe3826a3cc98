//! Online linear spectral unmixing.
//!
//! Spectra arrive one at a time. Each new spectrum is mapped to a short
//! vector of low-order Fourier coefficients, the pure-spectra estimate is
//! refreshed with a Kalman filter in that subspace, and an ADMM regression
//! onto a fixed set of measured spectra brings the estimate back to a
//! nonnegative full-resolution spectrum matrix.
//!
//! The crate also carries everything needed to exercise the method on
//! synthetic data: a dataset generator, acquisition-order simulation
//! (raw order and convex-hull peeling of phasor plots), the usual figures
//! of merit, and two offline baselines (VCA and MCR-ALS).

pub mod abundance;
pub mod datamodel;
pub mod dimred;
pub mod error;
pub mod geometric;
pub mod kalman;
pub mod linalg;
pub mod mcrals;
pub mod metrics;
pub mod pipeline;
pub mod protocols;
pub mod regression;
pub mod synthdata;

pub use error::{Error, Result};
