//! Intrusive quality metrics: frequency-weighted segmental SNR, LPC cepstral
//! distance and signal-to-reverberation ratio.

use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::{stft, StftConfig};
use crate::error::{invalid, Result};
use crate::scene::srr_db;

/// Segmentation and analysis settings shared by both metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub sample_rate: f64,
    pub frame_len: usize,
    pub hop: usize,
    pub mel_bands: usize,
    pub weight_exponent: f64,
    pub snr_floor_db: f64,
    pub snr_ceiling_db: f64,
    pub lpc_order: usize,
    /// Frames quieter than this (relative to the loudest reference frame)
    /// are left out of the cepstral distance.
    pub energy_threshold_db: f64,
    pub cd_ceiling_db: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000.0,
            frame_len: 512,
            hop: 256,
            mel_bands: 23,
            weight_exponent: 0.2,
            snr_floor_db: -10.0,
            snr_ceiling_db: 35.0,
            lpc_order: 16,
            energy_threshold_db: -40.0,
            cd_ceiling_db: 10.0,
        }
    }
}

impl MetricConfig {
    /// Same segmentation at another sample rate (32 ms frames, 50% overlap).
    pub fn for_rate(sample_rate: f64) -> Self {
        let frame_len = ((0.032 * sample_rate).round() as usize).max(2 * 16 + 2);
        Self { sample_rate, frame_len, hop: frame_len / 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || self.frame_len < 2 || self.hop == 0 || self.hop > self.frame_len {
            return Err(invalid(format!("bad metric segmentation: {self:?}")));
        }
        if self.mel_bands == 0 || self.lpc_order == 0 || self.lpc_order >= self.frame_len {
            return Err(invalid("mel_bands and lpc_order must be positive and lpc_order < frame_len"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub cd: f64,
    pub fwsnr: f64,
    pub srr: f64,
    /// Per-segment fwSNR, `None` for silent reference segments.
    pub fwsnr_frames: Vec<Option<f64>>,
    /// Per-segment CD, `None` for skipped segments.
    pub cd_frames: Vec<Option<f64>>,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        format!("cd={:.4}\nfwsnr={:.4}\nsrr={:.4}\n", self.cd, self.fwsnr, self.srr)
    }

    pub fn frames_csv(&self) -> String {
        let mut s = String::from("frame,fwsnr,cd\n");
        let n = self.fwsnr_frames.len().max(self.cd_frames.len());
        let fmt = |v: Option<&Option<f64>>| match v {
            Some(Some(x)) => format!("{x:.6}"),
            _ => String::new(),
        };
        for i in 0..n {
            let _ = writeln!(s, "{i},{},{}", fmt(self.fwsnr_frames.get(i)), fmt(self.cd_frames.get(i)));
        }
        s
    }
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(invalid(format!(
            "reference has {} samples, estimate has {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(invalid("reference signal is all zeros"));
    }
    Ok(())
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Segment start offsets; the last partial segment is dropped unless the
/// signal is shorter than one segment, in which case it is zero-padded.
fn segments(len: usize, cfg: &MetricConfig) -> Vec<usize> {
    if len <= cfg.frame_len {
        return vec![0];
    }
    (0..=(len - cfg.frame_len) / cfg.hop).map(|j| j * cfg.hop).collect()
}

fn windowed(x: &[f64], start: usize, win: &[f64]) -> Vec<f64> {
    win.iter().enumerate().map(|(i, w)| x.get(start + i).copied().unwrap_or(0.0) * w).collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the one-sided spectrum, each row of length `nfft/2+1`.
pub fn mel_filterbank(bands: usize, nfft: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let bins = nfft / 2 + 1;
    let top = hz_to_mel(sample_rate / 2.0);
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / nfft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn magnitude_spectrum(frame: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = frame.len();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm()).collect()
}

fn mean_of(frames: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = frames.iter().flatten().copied().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Per-segment fwSNR values (`None` where the reference segment is silent).
pub fn fw_seg_snr_frames(reference: &[f64], estimate: &[f64], cfg: &MetricConfig) -> Result<Vec<Option<f64>>> {
    cfg.validate()?;
    check_pair(reference, estimate)?;
    let win = hann(cfg.frame_len);
    let bank = mel_filterbank(cfg.mel_bands, cfg.frame_len, cfg.sample_rate);
    let mut planner = FftPlanner::new();
    let mut out = Vec::new();
    for start in segments(reference.len(), cfg) {
        let xr = magnitude_spectrum(&windowed(reference, start, &win), &mut planner);
        let xe = magnitude_spectrum(&windowed(estimate, start, &win), &mut planner);
        let mut num = 0.0;
        let mut den = 0.0;
        for filt in &bank {
            let br: f64 = filt.iter().zip(&xr).map(|(h, v)| h * v).sum();
            let be: f64 = filt.iter().zip(&xe).map(|(h, v)| h * v).sum();
            let w = br.powf(cfg.weight_exponent);
            if w == 0.0 {
                continue;
            }
            let diff = (br - be).powi(2);
            let snr = if diff == 0.0 { cfg.snr_ceiling_db } else { 10.0 * (br * br / diff).log10() };
            num += w * snr.clamp(cfg.snr_floor_db, cfg.snr_ceiling_db);
            den += w;
        }
        out.push(if den > 0.0 { Some(num / den) } else { None });
    }
    Ok(out)
}

/// Frequency-weighted segmental SNR in dB.
pub fn fw_seg_snr(reference: &[f64], estimate: &[f64], cfg: &MetricConfig) -> Result<f64> {
    let frames = fw_seg_snr_frames(reference, estimate, cfg)?;
    mean_of(&frames).ok_or_else(|| invalid("no non-silent reference segment"))
}

/// LPC coefficients `a_1..a_p` of `A(z) = 1 + sum a_i z^-i` by Levinson-Durbin.
/// `None` when the recursion is not strictly stable.
pub fn lpc(frame: &[f64], order: usize) -> Option<Vec<f64>> {
    let r: Vec<f64> = (0..=order)
        .map(|lag| frame.iter().zip(frame.iter().skip(lag)).map(|(a, b)| a * b).sum())
        .collect();
    if !(r[0] > 0.0) {
        return None;
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    for i in 1..=order {
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let k = -acc / err;
        if !(k.abs() < 1.0) {
            return None;
        }
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) {
            return None;
        }
    }
    Some(a[1..].to_vec())
}

/// Cepstrum `c_1..c_n` of the all-pole model `1/A(z)`.
pub fn lpc_to_cepstrum(a: &[f64], n: usize) -> Vec<f64> {
    let p = a.len();
    let mut c = vec![0.0; n + 1];
    for m in 1..=n {
        let mut s = if m <= p { -a[m - 1] } else { 0.0 };
        for k in 1..m {
            if m - k <= p {
                s -= (k as f64 / m as f64) * c[k] * a[m - k - 1];
            }
        }
        c[m] = s;
    }
    c[1..].to_vec()
}

/// Cepstral distance between two cepstra (without `c_0`), in dB.
pub fn cepstral_distance_db(c_ref: &[f64], c_est: &[f64]) -> f64 {
    let s: f64 = c_ref.iter().zip(c_est).map(|(a, b)| (a - b).powi(2)).sum();
    10.0 / std::f64::consts::LN_10 * (2.0 * s).sqrt()
}

/// Per-segment cepstral distances (`None` for skipped segments).
pub fn cepstral_distance_frames(reference: &[f64], estimate: &[f64], cfg: &MetricConfig) -> Result<Vec<Option<f64>>> {
    cfg.validate()?;
    check_pair(reference, estimate)?;
    let win = hann(cfg.frame_len);
    let starts = segments(reference.len(), cfg);
    let frames: Vec<(Vec<f64>, Vec<f64>)> = starts
        .iter()
        .map(|&s| (windowed(reference, s, &win), windowed(estimate, s, &win)))
        .collect();
    let energies: Vec<f64> = frames.iter().map(|(r, _)| r.iter().map(|v| v * v).sum()).collect();
    let peak = energies.iter().copied().fold(0.0, f64::max);
    let gate = peak * 10f64.powf(cfg.energy_threshold_db / 10.0);
    Ok(frames
        .iter()
        .zip(&energies)
        .map(|((r, e), &energy)| {
            if energy <= gate || energy == 0.0 {
                return None;
            }
            let ar = lpc(r, cfg.lpc_order)?;
            let ae = lpc(e, cfg.lpc_order)?;
            let cr = lpc_to_cepstrum(&ar, cfg.lpc_order);
            let ce = lpc_to_cepstrum(&ae, cfg.lpc_order);
            Some(cepstral_distance_db(&cr, &ce).clamp(0.0, cfg.cd_ceiling_db))
        })
        .collect())
}

/// Mean LPC cepstral distance in dB over energetic segments.
pub fn cepstral_distance(reference: &[f64], estimate: &[f64], cfg: &MetricConfig) -> Result<f64> {
    let frames = cepstral_distance_frames(reference, estimate, cfg)?;
    mean_of(&frames).ok_or_else(|| invalid("no segment usable for cepstral distance"))
}

/// All three metrics; SRR is computed in the STFT domain.
pub fn evaluate(reference: &[f64], estimate: &[f64], cfg: &MetricConfig) -> Result<MetricReport> {
    let fwsnr_frames = fw_seg_snr_frames(reference, estimate, cfg)?;
    let cd_frames = cepstral_distance_frames(reference, estimate, cfg)?;
    let stft_cfg = StftConfig { sample_rate: cfg.sample_rate, ..StftConfig::default() };
    let r = stft(&[reference.to_vec()], &stft_cfg)?;
    let e = stft(&[estimate.to_vec()], &stft_cfg)?;
    Ok(MetricReport {
        fwsnr: mean_of(&fwsnr_frames).ok_or_else(|| invalid("no non-silent reference segment"))?,
        cd: mean_of(&cd_frames).ok_or_else(|| invalid("no segment usable for cepstral distance"))?,
        srr: srr_db(&r, &e)?,
        fwsnr_frames,
        cd_frames,
    })
}
