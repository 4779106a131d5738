use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

/// Frame layout of the short-time Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub sample_rate: f64,
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftConfig {
    /// 16 kHz, 32 ms square-root Hann at 50% overlap, 512-point FFT.
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            window_len: 512,
            hop: 256,
            fft_len: 512,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(invalid(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        if self.window_len == 0 || self.window_len % 2 != 0 {
            return Err(invalid(format!("window length must be even and positive, got {}", self.window_len)));
        }
        if self.hop * 2 != self.window_len {
            return Err(invalid(format!(
                "hop must be half the window length ({}), got {}",
                self.window_len / 2,
                self.hop
            )));
        }
        if self.fft_len < self.window_len {
            return Err(invalid(format!(
                "fft length {} shorter than window {}",
                self.fft_len, self.window_len
            )));
        }
        Ok(())
    }

    /// Number of one-sided bins, `fft_len / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.fft_len as f64
    }

    /// Frames needed to cover `len` samples; the tail is zero-padded.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.window_len {
            1
        } else {
            (len - self.window_len).div_ceil(self.hop) + 1
        }
    }
}

/// Periodic Hann window, square-rooted: `sqrt(0.5 - 0.5 cos(2 pi i / N))`.
///
/// Used for both analysis and synthesis; the squared window overlap-adds to
/// exactly one at 50% hop.
pub fn sqrt_hann(window_len: usize) -> Result<Vec<f64>> {
    if window_len == 0 || window_len % 2 != 0 {
        return Err(invalid(format!("window length must be even and positive, got {window_len}")));
    }
    let n = window_len as f64;
    Ok((0..window_len)
        .map(|i| (0.5 - 0.5 * (2.0 * PI * i as f64 / n).cos()).max(0.0).sqrt())
        .collect())
}

/// Complex STFT tensor, `channels x bins x frames`.
///
/// Storage is channel-major, then bin, then frame, so the frame sequence of
/// one bin on one channel is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    channels: usize,
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
    pub config: StftConfig,
    /// Length of the time signal this was computed from (used by `istft`).
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn zeros(channels: usize, frames: usize, config: StftConfig) -> Self {
        let bins = config.num_bins();
        Self {
            channels,
            bins,
            frames,
            data: vec![Complex64::new(0.0, 0.0); channels * bins * frames],
            config,
            signal_len: frames.saturating_sub(1) * config.hop + config.window_len,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    fn offset(&self, m: usize, k: usize) -> usize {
        (m * self.bins + k) * self.frames
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize, n: usize) -> Complex64 {
        self.data[self.offset(m, k) + n]
    }

    #[inline]
    pub fn set(&mut self, m: usize, k: usize, n: usize, v: Complex64) {
        let o = self.offset(m, k);
        self.data[o + n] = v;
    }

    /// All frames of bin `k` on channel `m`.
    pub fn track(&self, m: usize, k: usize) -> &[Complex64] {
        let o = self.offset(m, k);
        &self.data[o..o + self.frames]
    }

    pub fn track_mut(&mut self, m: usize, k: usize) -> &mut [Complex64] {
        let o = self.offset(m, k);
        &mut self.data[o..o + self.frames]
    }

    /// Microphone vector `y(k, n)`.
    pub fn frame_vector(&self, k: usize, n: usize) -> Vec<Complex64> {
        (0..self.channels).map(|m| self.get(m, k, n)).collect()
    }

    /// Bin `k` as a frame-major `frames x channels` matrix.
    pub fn bin_matrix(&self, k: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.frames * self.channels];
        for m in 0..self.channels {
            for (n, v) in self.track(m, k).iter().enumerate() {
                out[n * self.channels + m] = *v;
            }
        }
        out
    }

    /// Copies channel `m` into a new single-channel spectrogram.
    pub fn channel(&self, m: usize) -> Spectrogram {
        let o = self.offset(m, 0);
        Spectrogram {
            channels: 1,
            bins: self.bins,
            frames: self.frames,
            data: self.data[o..o + self.bins * self.frames].to_vec(),
            config: self.config,
            signal_len: self.signal_len,
        }
    }

    /// Builds a single-channel spectrogram from per-bin frame tracks.
    pub fn from_bin_tracks(tracks: Vec<Vec<Complex64>>, config: StftConfig, signal_len: usize) -> Result<Self> {
        let bins = config.num_bins();
        if tracks.len() != bins {
            return Err(invalid(format!("expected {bins} bin tracks, got {}", tracks.len())));
        }
        let frames = tracks.first().map_or(0, Vec::len);
        if tracks.iter().any(|t| t.len() != frames) {
            return Err(invalid("bin tracks differ in length"));
        }
        Ok(Self {
            channels: 1,
            bins,
            frames,
            data: tracks.into_iter().flatten().collect(),
            config,
            signal_len,
        })
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    fn check_same_shape(&self, other: &Spectrogram) -> Result<()> {
        if self.channels != other.channels || self.bins != other.bins || self.frames != other.frames {
            return Err(invalid(format!(
                "shape mismatch: {}x{}x{} vs {}x{}x{}",
                self.channels, self.bins, self.frames, other.channels, other.bins, other.frames
            )));
        }
        Ok(())
    }

    /// Element-wise `self + other`.
    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(out)
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &Spectrogram) -> Result<Spectrogram> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= *b;
        }
        Ok(out)
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Sum of `|X|^2` over every element.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(fft_len: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(fft_len),
        inverse: planner.plan_fft_inverse(fft_len),
    }
}

/// Analysis: frame `n` covers samples `[n*hop, n*hop + window_len)`.
///
/// Samples past the end of the signal are read as zero. Every channel must
/// have the same length, at least one window long.
pub fn stft(signal: &[Vec<f64>], config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let channels = signal.len();
    if channels == 0 {
        return Err(invalid("no channels"));
    }
    let len = signal[0].len();
    if signal.iter().any(|c| c.len() != len) {
        return Err(invalid("channel length mismatch"));
    }
    if len < config.window_len {
        return Err(invalid(format!(
            "signal length {len} shorter than window {}",
            config.window_len
        )));
    }
    let window = sqrt_hann(config.window_len)?;
    let frames = config.num_frames(len);
    let mut spec = Spectrogram::zeros(channels, frames, *config);
    spec.signal_len = len;
    let plans = plans(config.fft_len);
    let bins = config.num_bins();
    let mut buf = vec![Complex64::new(0.0, 0.0); config.fft_len];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plans.forward.get_inplace_scratch_len()];
    for (m, x) in signal.iter().enumerate() {
        for n in 0..frames {
            let start = n * config.hop;
            buf.fill(Complex64::new(0.0, 0.0));
            for (i, w) in window.iter().enumerate() {
                if let Some(s) = x.get(start + i) {
                    buf[i] = Complex64::new(s * w, 0.0);
                }
            }
            plans.forward.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                spec.set(m, k, n, buf[k]);
            }
        }
    }
    Ok(spec)
}

/// Synthesis by windowed overlap-add. Returns `signal_len` samples per channel.
pub fn istft(spec: &Spectrogram, config: &StftConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if spec.config != *config {
        return Err(invalid(format!(
            "spectrogram was computed with {:?}, synthesis requested with {:?}",
            spec.config, config
        )));
    }
    let window = sqrt_hann(config.window_len)?;
    let plans = plans(config.fft_len);
    let nfft = config.fft_len;
    let bins = spec.bins();
    let total = (spec.frames().saturating_sub(1) * config.hop + config.window_len).max(spec.signal_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plans.inverse.get_inplace_scratch_len()];
    let scale = 1.0 / nfft as f64;
    let mut out = Vec::with_capacity(spec.channels());
    for m in 0..spec.channels() {
        let mut y = vec![0.0; total];
        for n in 0..spec.frames() {
            for k in 0..bins {
                buf[k] = spec.get(m, k, n);
            }
            // DC and Nyquist of a real signal are real.
            buf[0].im = 0.0;
            if nfft % 2 == 0 {
                buf[nfft / 2].im = 0.0;
            }
            for k in bins..nfft {
                buf[k] = buf[nfft - k].conj();
            }
            plans.inverse.process_with_scratch(&mut buf, &mut scratch);
            let start = n * config.hop;
            for (i, w) in window.iter().enumerate() {
                y[start + i] += buf[i].re * scale * w;
            }
        }
        y.truncate(spec.signal_len);
        out.push(y);
    }
    Ok(out)
}
