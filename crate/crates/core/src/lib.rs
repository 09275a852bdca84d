//! Simulation and calibration toolkit for a square lattice of fixed-frequency
//! transmons: spectra and static ZZ, driven open-system dynamics, Stark-induced
//! ZZ gates, randomized benchmarking, tomography and curve fitting.
//!
//! Units throughout: MHz (with h = 1), µs, radians. ZZ rates are in kHz.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod device;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod io;
pub mod operators;
pub mod rb;
pub mod sizzle;
pub mod spectrum;
pub mod tomography;

pub use error::{Error, ErrorCategory, Result};
