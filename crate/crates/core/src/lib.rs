//! Core library for a desk-scale reservoir-computing workbench built around a
//! simulated multi-electrode-array (MEA) culture.
//!
//! The pipeline mirrors a wet-lab setup end to end: seven-segment digit
//! patterns are encoded as biphasic stimulation pulses, delivered to a
//! simulated spiking culture on a 64x64 electrode grid, recorded as
//! extracellular traces or spike trains, reduced to per-electrode spike-count
//! features, and classified with a single-layer perceptron. An artificial
//! echo-state reservoir provides a noise-matched baseline, and the experiment
//! harness ties everything together into reproducible multi-session runs.

pub mod config;
pub mod culture;
pub mod detect;
pub mod error;
pub mod harness;
pub mod readout;
pub mod reservoir;
pub mod seed;
pub mod signal;
pub mod slp;
pub mod stim;
pub mod svg;

pub use error::{Error, Result};
