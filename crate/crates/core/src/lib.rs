//! End-to-end binaural sound localisation.
//!
//! The crate estimates source azimuth directly from two-channel raw
//! waveforms. It provides:
//!
//! - [`audio`]: waveform containers, framing, WAV I/O.
//! - [`dsp`]: gammatone filterbank, GCC-PHAT features, spectrum analysis.
//! - [`nn`]: a small trainable-network engine (forward/backward, Adam,
//!   learning-rate schedule, gradient checking).
//! - [`models`]: the three concrete architectures (gammatone-constrained CNN,
//!   fully data-driven CNN, GCC-PHAT DNN baseline) and checkpointing.
//! - [`sim`]: a synthetic binaural room simulator (spherical head model plus
//!   image-source reverberation) and dataset synthesis.
//! - [`harness`]: training/evaluation orchestration and reporting.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod models;
pub mod nn;
pub mod sim;

pub use error::{Error, Result};
