//! Multichannel dereverberation and noise reduction built around a
//! convolutional MPDR beamformer.
//!
//! The beamformer and a multichannel linear-prediction reverb canceller are
//! adapted jointly per STFT bin with a two-row affine projection update whose
//! cost grows linearly in the stacked filter length. A fixed superdirective
//! variant adapts only the canceller. Around that sit the usual pieces: STFT,
//! array geometry and steering, fixed baselines, synthetic scenes with known
//! ground truth, intrusive metrics, and a MAC-counting complexity harness.
//!
//! Bin-level work runs on rayon when the `parallel` feature is enabled
//! (default). Every parallel path has a sequential twin and produces
//! bit-identical output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apa;
pub mod array;
pub mod bench;
pub mod dsp;
pub mod error;
pub mod fixed;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod psd;
pub mod scene;
pub mod sdmvdr;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Converts a power quantity in dB to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to dB.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}
