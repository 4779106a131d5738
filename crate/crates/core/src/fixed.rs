//! Non-adaptive baselines: delay-and-sum and superdirective MVDR.
//!
//! Weights are applied as `w^H y` and satisfy `a^H w = 1`.

use num_complex::Complex64;

use crate::array::{CoherenceMatrix, SteeringVector};
use crate::dsp::Spectrogram;
use crate::error::{invalid, Result};
use crate::linalg;

/// Default diagonal loading of the coherence matrix.
pub const DEFAULT_LOADING: f64 = 0.01;

/// Per-bin beamformer weights, `bins x mics`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedWeights {
    mics: usize,
    data: Vec<Complex64>,
}

impl FixedWeights {
    pub fn from_bins(bins: Vec<Vec<Complex64>>) -> Result<Self> {
        let mics = bins.first().map_or(0, Vec::len);
        if mics == 0 || bins.iter().any(|b| b.len() != mics) {
            return Err(invalid("weights need a consistent, nonzero mic count"));
        }
        Ok(Self { mics, data: bins.concat() })
    }

    pub fn mics(&self) -> usize {
        self.mics
    }

    pub fn bins(&self) -> usize {
        self.data.len() / self.mics
    }

    pub fn bin(&self, k: usize) -> &[Complex64] {
        &self.data[k * self.mics..(k + 1) * self.mics]
    }
}

/// `w(k) = a(k) / (a^H a)`.
pub fn delay_and_sum(a: &SteeringVector) -> Result<FixedWeights> {
    let mut data = Vec::with_capacity(a.bins() * a.mics());
    for k in 0..a.bins() {
        let ak = a.bin(k);
        let nrm = linalg::norm_sqr(ak);
        if nrm == 0.0 {
            return Err(invalid(format!("zero-norm steering vector at bin {k}")));
        }
        data.extend(ak.iter().map(|v| v / nrm));
    }
    Ok(FixedWeights { mics: a.mics(), data })
}

/// `w = (G + dI)^-1 a / (a^H (G + dI)^-1 a)` per bin.
pub fn superdirective_mvdr(a: &SteeringVector, gamma: &CoherenceMatrix, loading: f64) -> Result<FixedWeights> {
    let m = a.mics();
    if gamma.mics() != m || gamma.bins() != a.bins() {
        return Err(invalid(format!(
            "coherence is {}x{} over {} bins, steering has {} mics over {} bins",
            gamma.mics(),
            gamma.mics(),
            gamma.bins(),
            m,
            a.bins()
        )));
    }
    if !(loading >= 0.0) {
        return Err(invalid(format!("loading must be non-negative, got {loading}")));
    }
    let mut data = Vec::with_capacity(a.bins() * m);
    let mut loaded = vec![0.0; m * m];
    for k in 0..a.bins() {
        loaded.copy_from_slice(gamma.bin(k));
        for i in 0..m {
            loaded[i * m + i] += loading;
        }
        let l = linalg::cholesky(&loaded, m)?;
        let ak = a.bin(k);
        let x = linalg::cholesky_solve(&l, m, ak);
        let denom = linalg::dot_h(ak, &x);
        data.extend(x.iter().map(|v| v / denom));
    }
    Ok(FixedWeights { mics: m, data })
}

/// `out(k, n) = w(k)^H y(k, n)`.
pub fn apply_fixed(w: &FixedWeights, spec: &Spectrogram) -> Result<Spectrogram> {
    if w.mics() != spec.channels() || w.bins() != spec.bins() {
        return Err(invalid(format!(
            "weights are {} bins x {} mics, spectrogram {} bins x {} channels",
            w.bins(),
            w.mics(),
            spec.bins(),
            spec.channels()
        )));
    }
    let mut out = Spectrogram::zeros(1, spec.frames(), spec.config);
    out.signal_len = spec.signal_len;
    for k in 0..spec.bins() {
        let wk: Vec<Complex64> = w.bin(k).iter().map(|v| v.conj()).collect();
        let dst = out.track_mut(0, k);
        for (m, wc) in wk.iter().enumerate() {
            for (o, y) in dst.iter_mut().zip(spec.track(m, k)) {
                *o += wc * y;
            }
        }
    }
    Ok(out)
}
