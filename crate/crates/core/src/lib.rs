//! Reverberation-based distance features for 3D sound event localization and
//! detection (SELD) on first-order ambisonics (FOA) audio.
//!
//! The crate is organised bottom-up:
//!
//! * [`dsp`]: windowing, STFT/ISTFT, mel filterbank, log compression.
//! * [`dereverb`]: single-channel weighted prediction error (WPE) and the
//!   direct/reverberant split of the omnidirectional channel.
//! * [`features`]: log-mel, intensity vectors, DRR, D+R and stpACC feature
//!   maps, stacked into the network input tensor.
//! * [`geometry`]: floor-reflection delays and initial time delay gap.
//! * [`simulate`]: synthetic room impulse responses and measurement oracles.
//! * [`augment`]: audio channel swap (ACS) augmentation.
//! * [`metrics`]: location-aware F-score, DOA error, relative distance error,
//!   SELD score and jackknife confidence intervals.
//! * [`io`]: WAV, metadata CSV and feature tensor files.

pub mod augment;
pub mod dereverb;
pub mod dsp;
mod error;
pub mod features;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod simulate;

pub use error::{Error, Result};

/// Power floor shared by the PSD clamp and the log compression.
pub const EPSILON: f64 = 1e-10;

/// Sample rate every feature pipeline expects.
pub const SAMPLE_RATE: u32 = 24_000;
