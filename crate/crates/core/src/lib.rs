//! Edited magnetic resonance spectroscopy reconstruction.
//!
//! The crate covers the full experimental loop for difference-edited
//! spectroscopy at desk scale: a synthetic scan simulator, a spectrogram
//! front end, a vision-transformer regression model trained with manually
//! derived gradients, classical averaging baselines, and an evaluation
//! harness with peak fitting and paired statistics.

pub mod error;

pub(crate) mod bytes;
pub mod config;
pub mod dataset;
pub mod fft;
pub mod fit;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod simulator;
pub mod spectrogram;
pub mod stats;

pub use error::{Error, Result};
