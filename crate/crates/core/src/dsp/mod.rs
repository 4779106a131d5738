//! STFT analysis/synthesis and the band partition that assigns a prediction
//! order to each frequency bin.

mod bands;
mod stft;

pub use bands::BandPlan;
pub use stft::{istft, sqrt_hann, stft, Spectrogram, StftConfig};
