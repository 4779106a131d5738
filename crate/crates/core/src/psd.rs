//! Spectral-gain enhancement of the pre-estimated speech PSD.
//!
//! A [`GainProvider`] supplies `G(k, n)` in `[0, 1]`; the enhanced PSD is
//! `G^2 * phi`. The identity provider leaves the estimate untouched, and the
//! mask-file provider injects gains computed elsewhere (e.g. by a network).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub const MASK_MAGIC: &[u8; 4] = b"GMSK";

/// Source of per-bin, per-frame spectral gains.
pub trait GainProvider: Send + Sync {
    /// Gain for bin `k`, frame `n`, in `[0, 1]`.
    fn gain(&self, k: usize, n: usize) -> f64;

    /// `(bins, frames)` this provider covers, or `None` if unbounded.
    fn dims(&self) -> Option<(usize, usize)> {
        None
    }

    fn is_identity(&self) -> bool {
        false
    }
}

/// `G = 1` everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityGain;

impl GainProvider for IdentityGain {
    fn gain(&self, _k: usize, _n: usize) -> f64 {
        1.0
    }

    fn is_identity(&self) -> bool {
        true
    }
}

/// Gains stored bin-major (`bins x frames`), already clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGain {
    bins: usize,
    frames: usize,
    gains: Vec<f32>,
}

impl MaskGain {
    pub fn new(bins: usize, frames: usize, gains: Vec<f32>) -> Result<Self> {
        if gains.len() != bins * frames {
            return Err(invalid(format!(
                "mask holds {} values, expected {bins} x {frames}",
                gains.len()
            )));
        }
        let mut clamped = 0usize;
        let gains = gains
            .into_iter()
            .map(|g| {
                let c = if g.is_nan() { 0.0 } else { g.clamp(0.0, 1.0) };
                if c != g {
                    clamped += 1;
                }
                c
            })
            .collect();
        if clamped > 0 {
            log::warn!("clamped {clamped} mask values into [0, 1]");
        }
        Ok(Self { bins, frames, gains })
    }

    pub fn gains(&self) -> &[f32] {
        &self.gains
    }

    /// Reads the `GMSK` format: magic, `u32` bins, `u32` frames, then
    /// `bins * frames` little-endian `f32` values, bin-major.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Malformed {
                offset: bytes.len() as u64,
                message: "truncated mask header".into(),
            });
        }
        if &bytes[..4] != MASK_MAGIC {
            return Err(Error::Malformed { offset: 0, message: "missing GMSK magic".into() });
        }
        let bins = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[12..];
        if payload.len() != bins * frames * 4 {
            return Err(Error::Malformed {
                offset: 12,
                message: format!(
                    "payload is {} bytes, header implies {} ({bins} x {frames} f32)",
                    payload.len(),
                    bins * frames * 4
                ),
            });
        }
        let gains = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(bins, frames, gains)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.gains.len() * 4);
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&(self.bins as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        for g in &self.gains {
            out.extend_from_slice(&g.to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }
}

impl GainProvider for MaskGain {
    fn gain(&self, k: usize, n: usize) -> f64 {
        self.gains[k * self.frames + n] as f64
    }

    fn dims(&self) -> Option<(usize, usize)> {
        Some((self.bins, self.frames))
    }
}

/// Loads a mask file and checks it covers `bins x frames`.
pub fn mask_file_provider(path: impl AsRef<Path>, bins: usize, frames: usize) -> Result<MaskGain> {
    let mask = MaskGain::read(path)?;
    check_dims(&mask, bins, frames)?;
    Ok(mask)
}

pub fn check_dims(provider: &dyn GainProvider, bins: usize, frames: usize) -> Result<()> {
    match provider.dims() {
        Some((b, f)) if (b, f) != (bins, frames) => Err(invalid(format!(
            "gain mask is {b} x {f}, utterance is {bins} x {frames}"
        ))),
        _ => Ok(()),
    }
}

/// `G^2 * phi`, with `G` clamped into `[0, 1]`.
#[inline]
pub fn apply_gain(phi: f64, gain: f64) -> f64 {
    let g = if (0.0..=1.0).contains(&gain) {
        gain
    } else {
        log::warn!("gain {gain} outside [0, 1], clamping");
        if gain.is_nan() { 0.0 } else { gain.clamp(0.0, 1.0) }
    };
    g * g * phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gain_arithmetic() {
        assert_eq!(apply_gain(3.7, 1.0), 3.7);
        assert_eq!(apply_gain(3.7, 0.0), 0.0);
        assert_eq!(apply_gain(8.0, 0.5), 2.0);
        assert_eq!(apply_gain(8.0, 1.5), 8.0);
        assert_eq!(apply_gain(8.0, -0.5), 0.0);
    }

    #[test]
    fn identity_is_noop() {
        let p = IdentityGain;
        for n in 0..3 {
            for k in 0..257 {
                assert_eq!(p.gain(k, n), 1.0);
                assert_eq!(apply_gain(1.25 * k as f64, p.gain(k, n)), 1.25 * k as f64);
            }
        }
    }

    #[test]
    fn ones_mask_matches_identity() {
        let m = MaskGain::new(4, 3, vec![1.0; 12]).unwrap();
        for k in 0..4 {
            for n in 0..3 {
                assert_eq!(m.gain(k, n), IdentityGain.gain(k, n));
            }
        }
    }

    #[test]
    fn mask_layout_is_bin_major() {
        let m = MaskGain::new(2, 3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert_eq!(m.gain(1, 0), 0.3f32 as f64);
        assert_eq!(m.gain(0, 2), 0.2f32 as f64);
    }

    #[test]
    fn mask_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gmsk");
        MaskGain::new(3, 2, vec![0.5; 6]).unwrap().write(&p).unwrap();
        assert!(mask_file_provider(&p, 3, 2).is_ok());
        assert!(matches!(mask_file_provider(&p, 3, 5), Err(Error::InvalidArgument(_))));
        assert!(matches!(mask_file_provider(dir.path().join("missing"), 3, 2), Err(Error::Io(_))));
        assert!(MaskGain::from_bytes(b"GMSK\x01\0\0\0\x01\0\0\0").is_err());
        assert!(MaskGain::from_bytes(b"XMSK\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn header_bytes_exact() {
        let m = MaskGain::new(1, 2, vec![1.0, 0.25]).unwrap();
        let b = m.to_bytes();
        assert_eq!(&b[..12], b"GMSK\x01\0\0\0\x02\0\0\0");
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&b[16..20], &0.25f32.to_le_bytes());
    }

    proptest! {
        #[test]
        fn mask_roundtrip_bit_identical(bins in 1usize..20, frames in 1usize..20, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let gains: Vec<f32> = (0..bins * frames).map(|_| rng.random::<f32>()).collect();
            let m = MaskGain::new(bins, frames, gains).unwrap();
            let back = MaskGain::from_bytes(&m.to_bytes()).unwrap();
            prop_assert_eq!(back, m);
        }

        #[test]
        fn gain_monotone_and_homogeneous(phi in 0.0f64..1e6, g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0, s in 0.0f64..100.0) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(apply_gain(phi, lo) <= apply_gain(phi, hi));
            prop_assert!(apply_gain(phi, g1) <= phi);
            let a = apply_gain(s * phi, g1);
            let b = s * apply_gain(phi, g1);
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
