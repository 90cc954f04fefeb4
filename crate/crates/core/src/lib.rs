//! Numerical core of a 1D U-Net denoising autoencoder for multichannel EEG.
//!
//! Everything here is pure computation over in-memory buffers and builds
//! without `std`: synthetic data generation, independent-component mixture
//! synthesis, the U-Net with its analytic backward pass, the four-term
//! reconstruction loss, Adam training, reconstruction metrics and the
//! band-pass FIR baseline. File formats and the command line live in the
//! `icunet` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mixture;
pub mod network;
pub mod segment;
pub mod signalgen;
pub mod spectral;
pub mod training;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
#[cfg(any(test, feature = "oracle"))]
pub mod gradcheck;

pub use error::{Error, Result};
pub use segment::{Pair, Segment};
