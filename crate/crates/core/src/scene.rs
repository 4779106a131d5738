//! Synthetic scenes with known components, used as ground truth.
//!
//! MCLP scenes generate reverberation with exactly the delayed linear
//! prediction model the canceller assumes, so the optimum is known to be
//! reachable. RIR scenes convolve with exponentially decaying random tails
//! and test behaviour under model mismatch.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::array::{diffuse_coherence, plane_wave_steering, ArrayGeometry, SteeringVector, SPEED_OF_SOUND};
use crate::dsp::{istft, stft, Spectrogram, StftConfig};
use crate::error::{invalid, Error, Result};
use crate::io::{write_wav, AudioBuffer, SampleFormat};
use crate::linalg;

/// Upper cap on reported SRR values (and its negative as the lower cap).
pub const SRR_CAP_DB: f64 = 60.0;

/// Loading added to the coherence before factorization in [`diffuse_noise`].
pub const NOISE_LOADING: f64 = 1e-6;

/// Time-invariant per-bin prediction matrices `C_D .. C_L` (each `M x M`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct MclpCoefficients {
    pub mics: usize,
    pub order: usize,
    pub delay: usize,
    bins: usize,
    data: Vec<Complex64>,
}

impl MclpCoefficients {
    pub fn zeros(mics: usize, bins: usize, order: usize, delay: usize) -> Result<Self> {
        if !(order > delay && delay >= 1) {
            return Err(invalid(format!("MCLP needs L > D >= 1, got L={order}, D={delay}")));
        }
        let taps = order - delay + 1;
        Ok(Self { mics, order, delay, bins, data: vec![Complex64::new(0.0, 0.0); bins * taps * mics * mics] })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    fn taps(&self) -> usize {
        self.order - self.delay + 1
    }

    fn offset(&self, k: usize, lag: usize) -> usize {
        debug_assert!(lag >= self.delay && lag <= self.order);
        let mm = self.mics * self.mics;
        (k * self.taps() + (lag - self.delay)) * mm
    }

    /// `C_lag` at bin `k`.
    pub fn matrix(&self, k: usize, lag: usize) -> &[Complex64] {
        let o = self.offset(k, lag);
        &self.data[o..o + self.mics * self.mics]
    }

    pub fn matrix_mut(&mut self, k: usize, lag: usize) -> &mut [Complex64] {
        let o = self.offset(k, lag);
        let mm = self.mics * self.mics;
        &mut self.data[o..o + mm]
    }

    /// Largest eigenvalue magnitude of the block companion matrix of the
    /// recursion `y(n) = sum_l C_l y(n-l) + u(n)` at bin `k`.
    pub fn spectral_radius(&self, k: usize) -> f64 {
        let m = self.mics;
        let dim = m * self.order;
        let mut a = DMatrix::<Complex64>::zeros(dim, dim);
        for lag in self.delay..=self.order {
            let c = self.matrix(k, lag);
            for i in 0..m {
                for j in 0..m {
                    a[(i, (lag - 1) * m + j)] = c[i * m + j];
                }
            }
        }
        for i in m..dim {
            a[(i, i - m)] = Complex64::new(1.0, 0.0);
        }
        if self.is_zero(k) {
            return 0.0;
        }
        match a.clone().try_schur(1e-14, 10_000) {
            Some(s) => s.eigenvalues().map(|ev| ev.iter().map(|v| v.norm()).fold(0.0, f64::max)),
            None => None,
        }
        .unwrap_or_else(|| gelfand_radius(&a))
    }

    fn is_zero(&self, k: usize) -> bool {
        (self.delay..=self.order).all(|lag| self.matrix(k, lag).iter().all(|v| v.norm() == 0.0))
    }

    /// Scales `C_l` by `g^l`, which scales every companion eigenvalue by `g`.
    fn scale_poles(&mut self, k: usize, g: f64) {
        for lag in self.delay..=self.order {
            let s = g.powi(lag as i32);
            for v in self.matrix_mut(k, lag) {
                *v *= s;
            }
        }
    }
}

/// `||A^(2^j)||^(1/2^j)`, which converges to the spectral radius from above.
fn gelfand_radius(a: &DMatrix<Complex64>) -> f64 {
    let n0 = a.norm();
    if n0 == 0.0 {
        return 0.0;
    }
    let mut p = a / Complex64::new(n0, 0.0);
    let mut log_norm = n0.ln();
    let mut power = 1.0;
    for _ in 0..20 {
        let q = &p * &p;
        let nq = q.norm();
        if nq == 0.0 {
            return 0.0;
        }
        log_norm = 2.0 * log_norm + nq.ln();
        power *= 2.0;
        p = q / Complex64::new(nq, 0.0);
    }
    (log_norm / power).exp()
}

/// Random stable prediction matrices: entry magnitude decays as `0.7^(l-D)`
/// and each bin is rescaled so its spectral radius is at most `max_radius`.
pub fn random_mclp(
    mics: usize,
    bins: usize,
    order: usize,
    delay: usize,
    gain: f64,
    max_radius: f64,
    seed: u64,
) -> Result<MclpCoefficients> {
    let mut c = MclpCoefficients::zeros(mics, bins, order, delay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = gain / (mics as f64).sqrt();
    for k in 0..bins {
        for lag in delay..=order {
            let decay = 0.7f64.powi((lag - delay) as i32) * scale;
            for v in c.matrix_mut(k, lag) {
                *v = complex_gaussian(&mut rng) * decay;
            }
        }
        let rho = c.spectral_radius(k);
        if !rho.is_finite() {
            return Err(Error::NumericalFailure(format!("eigenvalues failed to converge at bin {k}")));
        }
        if rho > max_radius {
            c.scale_poles(k, max_radius / rho);
        }
    }
    Ok(c)
}

/// Circular complex Gaussian with unit variance.
fn complex_gaussian(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Scene description echoed into the sidecar file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneMeta {
    pub kind: String,
    pub doa_deg: f64,
    pub snr_db: f64,
    pub t60_s: f64,
    pub drr_db: f64,
    pub seed: u64,
    pub order: usize,
    pub delay: usize,
}

impl SceneMeta {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kind={}", self.kind);
        let _ = writeln!(s, "doa_deg={}", self.doa_deg);
        let _ = writeln!(s, "snr_db={}", self.snr_db);
        if !self.t60_s.is_nan() {
            let _ = writeln!(s, "t60_s={}", self.t60_s);
        }
        if !self.drr_db.is_nan() {
            let _ = writeln!(s, "drr_db={}", self.drr_db);
        }
        let _ = writeln!(s, "seed={}", self.seed);
        if self.order > 0 {
            let _ = writeln!(s, "L={}", self.order);
            let _ = writeln!(s, "D={}", self.delay);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = SceneMeta::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| invalid(format!("bad metadata line '{line}'")))?;
            let bad = |e: &dyn std::fmt::Display| invalid(format!("metadata {k}: {e}"));
            match k.trim() {
                "kind" => m.kind = v.trim().to_string(),
                "doa_deg" => m.doa_deg = v.trim().parse().map_err(|e| bad(&e))?,
                "snr_db" => m.snr_db = v.trim().parse().map_err(|e| bad(&e))?,
                "t60_s" => m.t60_s = v.trim().parse().map_err(|e| bad(&e))?,
                "drr_db" => m.drr_db = v.trim().parse().map_err(|e| bad(&e))?,
                "seed" => m.seed = v.trim().parse().map_err(|e| bad(&e))?,
                "L" => m.order = v.trim().parse().map_err(|e| bad(&e))?,
                "D" => m.delay = v.trim().parse().map_err(|e| bad(&e))?,
                _ => {}
            }
        }
        Ok(m)
    }
}

/// Ground-truth bundle. `mixture = a * dry + reverb + noise` bin-wise.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mixture: Spectrogram,
    /// Desired signal at the reference mic.
    pub dry: Spectrogram,
    pub reverb: Spectrogram,
    pub noise: Spectrogram,
    pub steering: SteeringVector,
    pub true_mclp: Option<MclpCoefficients>,
    pub meta: SceneMeta,
}

impl Scene {
    /// `a(k) X(k, n)` for every mic.
    pub fn direct(&self) -> Spectrogram {
        let mut out = Spectrogram::zeros(self.mixture.channels(), self.dry.frames(), self.dry.config);
        out.signal_len = self.dry.signal_len;
        for k in 0..self.dry.bins() {
            let a = self.steering.bin(k);
            for (m, am) in a.iter().enumerate() {
                let src = self.dry.track(0, k).to_vec();
                for (o, x) in out.track_mut(m, k).iter_mut().zip(src) {
                    *o = am * x;
                }
            }
        }
        out
    }

    /// Writes `mixture.wav`, `dry.wav`, `reverb.wav`, `noise.wav` and `scene.txt`.
    pub fn export(&self, dir: impl AsRef<Path>, format: SampleFormat) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let cfg = self.mixture.config;
        let rate = cfg.sample_rate as u32;
        for (name, spec) in [
            ("mixture.wav", &self.mixture),
            ("dry.wav", &self.dry),
            ("reverb.wav", &self.reverb),
            ("noise.wav", &self.noise),
        ] {
            let buf = AudioBuffer::new(istft(spec, &cfg)?, rate)?;
            write_wav(dir.join(name), &buf, format)?;
        }
        std::fs::write(dir.join("scene.txt"), self.meta.to_text())?;
        Ok(())
    }
}

fn noise_std_for(signal_power: f64, snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        (signal_power / 10f64.powf(snr_db / 10.0)).sqrt()
    }
}

/// Builds a scene whose reverberation follows the delayed prediction model
/// exactly: `y(n) = a X(n) + v(n) + sum_{l=D..L} C_l y(n-l)`, with
/// spatially white noise `v` at `snr_db` relative to the mean direct power.
pub fn mclp_scene(
    dry: &[f64],
    a: &SteeringVector,
    c: &MclpCoefficients,
    config: &StftConfig,
    snr_db: f64,
    seed: u64,
) -> Result<Scene> {
    let x = stft(&[dry.to_vec()], config)?;
    let m = a.mics();
    let bins = x.bins();
    if a.bins() != bins || c.bins() != bins || c.mics != m {
        return Err(invalid(format!(
            "dimension mismatch: steering {}x{}, coefficients {}x{}, spectrogram {bins} bins",
            a.bins(),
            a.mics(),
            c.bins(),
            c.mics
        )));
    }
    for k in 0..bins {
        let rho = c.spectral_radius(k);
        if !(rho < 1.0) {
            return Err(invalid(format!("MCLP recursion unstable at bin {k}: spectral radius {rho:.4}")));
        }
    }
    let frames = x.frames();
    let direct_power = x.energy() / (bins * frames) as f64;
    let sigma = noise_std_for(direct_power, snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut noise = Spectrogram::zeros(m, frames, *config);
    if sigma > 0.0 {
        for mic in 0..m {
            for k in 0..bins {
                for v in noise.track_mut(mic, k) {
                    *v = complex_gaussian(&mut rng) * sigma;
                }
            }
        }
    }
    let mut mixture = Spectrogram::zeros(m, frames, *config);
    let mut reverb = Spectrogram::zeros(m, frames, *config);
    for s in [&mut mixture, &mut reverb, &mut noise] {
        s.signal_len = x.signal_len;
    }
    let mut r = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..bins {
        let ak = a.bin(k);
        for n in 0..frames {
            r.fill(Complex64::new(0.0, 0.0));
            for lag in c.delay..=c.order.min(n) {
                let cm = c.matrix(k, lag);
                for i in 0..m {
                    for j in 0..m {
                        r[i] += cm[i * m + j] * mixture.get(j, k, n - lag);
                    }
                }
            }
            let xn = x.get(0, k, n);
            for i in 0..m {
                reverb.set(i, k, n, r[i]);
                mixture.set(i, k, n, ak[i] * xn + r[i] + noise.get(i, k, n));
            }
        }
    }
    Ok(Scene {
        mixture,
        dry: x,
        reverb,
        noise,
        steering: a.clone(),
        true_mclp: Some(c.clone()),
        meta: SceneMeta {
            kind: "mclp".into(),
            snr_db,
            seed,
            order: c.order,
            delay: c.delay,
            drr_db: f64::NAN,
            t60_s: f64::NAN,
            ..Default::default()
        },
    })
}

/// Spatially diffuse noise: per bin and frame, unit-variance white complex
/// Gaussians colored by the Cholesky factor of `Gamma(k) + loading * I`.
pub fn diffuse_noise(geom: &ArrayGeometry, config: &StftConfig, frames: usize, seed: u64) -> Result<Spectrogram> {
    let m = geom.num_mics();
    let gamma = diffuse_coherence(geom, config, SPEED_OF_SOUND);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Spectrogram::zeros(m, frames, *config);
    let mut loaded = vec![0.0; m * m];
    let mut z = vec![Complex64::new(0.0, 0.0); m];
    let factors: Vec<Vec<f64>> = (0..config.num_bins())
        .map(|k| {
            loaded.copy_from_slice(gamma.bin(k));
            for i in 0..m {
                loaded[i * m + i] += NOISE_LOADING;
            }
            // normalize so the diagonal stays exactly one
            let s = 1.0 / (1.0 + NOISE_LOADING);
            loaded.iter_mut().for_each(|v| *v *= s);
            linalg::cholesky(&loaded, m)
        })
        .collect::<Result<_>>()?;
    for n in 0..frames {
        for (k, l) in factors.iter().enumerate() {
            for v in z.iter_mut() {
                *v = complex_gaussian(&mut rng);
            }
            for i in 0..m {
                let mut s = Complex64::new(0.0, 0.0);
                for j in 0..=i {
                    s += z[j] * l[i * m + j];
                }
                out.set(i, k, n, s);
            }
        }
    }
    Ok(out)
}

fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len() + h.len().saturating_sub(1)];
    }
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::new(0.0, 0.0));
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.truncate(x.len() + h.len() - 1);
    a.into_iter().map(|v| v.re / n as f64).collect()
}

/// Delays `x` by `delay` samples (fractional) in the frequency domain.
fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    if delay == 0.0 {
        return x.to_vec();
    }
    let pad = 2 * (delay.abs().ceil() as usize + 64);
    let n = (x.len() + pad).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    // leave room on both sides so negative delays do not wrap
    let lead = pad / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, v) in x.iter().enumerate() {
        buf[lead + i] = Complex64::new(*v, 0.0);
    }
    fwd.process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        if n % 2 == 0 && k == n / 2 {
            // Nyquist of a real signal: keep it real
            *v *= (std::f64::consts::PI * delay).cos();
        } else {
            *v *= Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * delay / n as f64);
        }
    }
    inv.process(&mut buf);
    (0..x.len()).map(|i| buf[lead + i].re / n as f64).collect()
}

/// Samples between the direct path and the start of the reverberant tail.
pub const TAIL_ONSET: usize = 32;

/// Room-like scene: per mic, the dry signal arrives as a plane wave and is
/// followed by an exponentially decaying Gaussian tail (`exp(-6.9 t / T60)`,
/// support `[0, T60)`) scaled so direct-to-tail energy equals `drr_db`.
/// Diffuse noise is added at `snr_db` relative to the reverberant speech at
/// the reference mic.
///
/// The `reverb` component is defined as `mixture - a X - noise`, so it also
/// absorbs the small error of the multiplicative STFT-domain plane-wave model.
#[allow(clippy::too_many_arguments)]
pub fn exp_decay_rir_scene(
    dry: &[f64],
    geom: &ArrayGeometry,
    azimuth: f64,
    t60: f64,
    drr_db: f64,
    snr_db: f64,
    seed: u64,
    config: &StftConfig,
) -> Result<Scene> {
    if !(t60 > 0.0) {
        return Err(invalid(format!("T60 must be positive, got {t60}")));
    }
    geom.validate()?;
    let m = geom.num_mics();
    let fs = config.sample_rate;
    let u = [azimuth.cos(), azimuth.sin(), 0.0];
    let tau: Vec<f64> = geom
        .positions
        .iter()
        .map(|p| -(p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / SPEED_OF_SOUND)
        .collect();
    let t_ref = tau[geom.reference_mic];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let tail_len = (t60 * fs).round() as usize;
    let tail_energy = if drr_db.is_infinite() && drr_db > 0.0 { 0.0 } else { 10f64.powf(-drr_db / 10.0) };
    let mut speech = Vec::with_capacity(m);
    for (mic, t) in tau.iter().enumerate() {
        let direct = if mic == geom.reference_mic { dry.to_vec() } else { fractional_delay(dry, (t - t_ref) * fs) };
        let mut tail: Vec<f64> = (0..tail_len)
            .map(|i| {
                let g: f64 = rng.sample(StandardNormal);
                g * (-6.9 * i as f64 / (t60 * fs)).exp()
            })
            .collect();
        let e: f64 = tail.iter().map(|v| v * v).sum();
        let s = if e > 0.0 && tail_energy > 0.0 { (tail_energy / e).sqrt() } else { 0.0 };
        tail.iter_mut().for_each(|v| *v *= s);
        let wet = fft_convolve(dry, &tail);
        let mut ch = direct;
        for (i, v) in ch.iter_mut().enumerate() {
            if i >= TAIL_ONSET {
                if let Some(w) = wet.get(i - TAIL_ONSET) {
                    *v += w;
                }
            }
        }
        speech.push(ch);
    }

    let len = dry.len();
    let frames = config.num_frames(len);
    let noise_time: Vec<Vec<f64>> = if snr_db.is_infinite() && snr_db > 0.0 {
        vec![vec![0.0; len]; m]
    } else {
        let mut ns = diffuse_noise(geom, config, frames, seed ^ 0x9e37_79b9_7f4a_7c15)?;
        ns.signal_len = len;
        let t = istft(&ns, config)?;
        let p_speech = speech[geom.reference_mic].iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
        let p_noise = t[geom.reference_mic].iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64;
        let g = if p_noise > 0.0 { noise_std_for(p_speech, snr_db) / p_noise.sqrt() } else { 0.0 };
        t.into_iter().map(|c| c.into_iter().map(|v| v * g).collect()).collect()
    };
    let mixture_time: Vec<Vec<f64>> = speech
        .iter()
        .zip(&noise_time)
        .map(|(s, n)| s.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();

    let steering = plane_wave_steering(geom, azimuth, 0.0, config, SPEED_OF_SOUND);
    let mixture = stft(&mixture_time, config)?;
    let dry_spec = stft(&[dry.to_vec()], config)?;
    let noise = stft(&noise_time, config)?;
    let mut scene = Scene {
        reverb: mixture.clone(),
        mixture,
        dry: dry_spec,
        noise,
        steering,
        true_mclp: None,
        meta: SceneMeta {
            kind: "rir".into(),
            doa_deg: azimuth.to_degrees(),
            snr_db,
            t60_s: t60,
            drr_db,
            seed,
            ..Default::default()
        },
    };
    let direct = scene.direct();
    scene.reverb = scene.mixture.sub(&direct)?.sub(&scene.noise)?;
    Ok(scene)
}

/// SRR of `estimate` against `reference` in the STFT domain: the estimate is
/// projected onto the reference, and the projection's energy is compared
/// with the residual's. Clamped to `[-60, 60]` dB.
pub fn srr_db(reference: &Spectrogram, estimate: &Spectrogram) -> Result<f64> {
    if reference.bins() != estimate.bins() || reference.frames() != estimate.frames() {
        return Err(invalid("reference and estimate differ in shape"));
    }
    let x = reference.channel(0);
    let e = estimate.channel(0);
    let xx = x.energy();
    if xx == 0.0 {
        return Err(invalid("reference signal is zero"));
    }
    let cross = linalg::dot_h(x.data(), e.data());
    let alpha = cross / xx;
    let target = alpha.norm_sqr() * xx;
    let resid: f64 = x.data().iter().zip(e.data()).map(|(xv, ev)| (ev - alpha * xv).norm_sqr()).sum();
    let srr = if resid == 0.0 {
        SRR_CAP_DB
    } else if target == 0.0 {
        -SRR_CAP_DB
    } else {
        10.0 * (target / resid).log10()
    };
    Ok(srr.clamp(-SRR_CAP_DB, SRR_CAP_DB))
}

/// SRR of a single-channel estimate against the scene's dry signal.
pub fn measure_srr(scene: &Scene, estimate: &Spectrogram) -> Result<f64> {
    srr_db(&scene.dry, estimate)
}

/// A speech-like test source: a harmonic voice with drifting pitch, shaped by
/// a syllable-rate envelope, plus a little breath noise. Deterministic in `seed`.
pub fn synthetic_speech(seconds: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sample_rate) as usize;
    let f0_base = 110.0 + 60.0 * rng.random::<f64>();
    let syll = 3.0 + 2.0 * rng.random::<f64>();
    let formants = [500.0 + 300.0 * rng.random::<f64>(), 1500.0 + 500.0 * rng.random::<f64>(), 2500.0];
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sample_rate;
        let f0 = f0_base * (1.0 + 0.1 * (2.0 * PI * 0.7 * t).sin());
        phase += 2.0 * PI * f0 / sample_rate;
        let env = (0.5 - 0.5 * (2.0 * PI * syll * t).cos()).powi(2);
        let mut v = 0.0;
        let mut h = 1;
        while (h as f64) * f0 < 0.45 * sample_rate && h <= 40 {
            let fh = h as f64 * f0;
            let amp: f64 = formants.iter().map(|&fc| 1.0 / (1.0 + ((fh - fc) / 150.0).powi(2))).sum();
            v += amp * (h as f64 * phase).sin() / h as f64;
            h += 1;
        }
        let breath: f64 = rng.sample::<f64, _>(StandardNormal) * 0.02;
        out.push(0.3 * env * v + breath);
    }
    out
}

/// Gaussian noise under a syllable-rate envelope. Unlike [`synthetic_speech`]
/// it is not predictable from past frames, which is what the prediction model
/// assumes of the source.
pub fn modulated_noise(seconds: f64, sample_rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sample_rate) as usize;
    let rate = 3.0 + 2.0 * rng.random::<f64>();
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            let env = (0.5 - 0.5 * (2.0 * std::f64::consts::PI * rate * t).cos()).powi(2) + 0.05;
            env * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::circular_array;

    fn small_cfg() -> StftConfig {
        StftConfig { sample_rate: 8000.0, window_len: 64, hop: 32, fft_len: 64 }
    }

    #[test]
    fn zero_coefficients_give_no_reverb() {
        let cfg = small_cfg();
        let g = circular_array(3, 0.05).unwrap();
        let a = plane_wave_steering(&g, 0.4, 0.0, &cfg, SPEED_OF_SOUND);
        let c = MclpCoefficients::zeros(3, cfg.num_bins(), 3, 1).unwrap();
        let dry = synthetic_speech(0.2, 8000.0, 1);
        let s = mclp_scene(&dry, &a, &c, &cfg, 20.0, 5).unwrap();
        assert_eq!(s.reverb.energy(), 0.0);
        let back = s.direct().add(&s.noise).unwrap();
        assert_eq!(back, s.mixture);
    }

    #[test]
    fn scalar_recursion_by_hand() {
        // M=1, L=2, D=1, C_2 = 0.5: r(n) = 0.5 y(n-2)
        let cfg = small_cfg();
        let g = ArrayGeometry::new(vec![[0.0; 3]], 0).unwrap();
        let a = plane_wave_steering(&g, 0.0, 0.0, &cfg, SPEED_OF_SOUND);
        let mut c = MclpCoefficients::zeros(1, cfg.num_bins(), 2, 1).unwrap();
        for k in 0..cfg.num_bins() {
            c.matrix_mut(k, 2)[0] = Complex64::new(0.5, 0.0);
        }
        let dry = synthetic_speech(0.1, 8000.0, 3);
        let s = mclp_scene(&dry, &a, &c, &cfg, f64::INFINITY, 0).unwrap();
        assert_eq!(s.noise.energy(), 0.0);
        for k in 0..cfg.num_bins() {
            let mut y = Vec::new();
            for n in 0..s.dry.frames() {
                let r = if n >= 2 { y[n - 2] * 0.5 } else { Complex64::new(0.0, 0.0) };
                y.push(s.dry.get(0, k, n) + r);
                assert_eq!(s.reverb.get(0, k, n), r);
                assert_eq!(s.mixture.get(0, k, n), y[n]);
            }
        }
    }

    #[test]
    fn unstable_coefficients_rejected() {
        let cfg = small_cfg();
        let g = ArrayGeometry::new(vec![[0.0; 3]], 0).unwrap();
        let a = plane_wave_steering(&g, 0.0, 0.0, &cfg, SPEED_OF_SOUND);
        let mut c = MclpCoefficients::zeros(1, cfg.num_bins(), 2, 1).unwrap();
        c.matrix_mut(3, 1)[0] = Complex64::new(1.2, 0.0);
        let err = mclp_scene(&[0.0; 256], &a, &c, &cfg, 30.0, 0).unwrap_err().to_string();
        assert!(err.contains("1.2"), "{err}");
    }

    #[test]
    fn spectral_radius_scalar_ar2() {
        // y(n) = 0.5 y(n-2): poles at +-sqrt(0.5)
        let mut c = MclpCoefficients::zeros(1, 1, 2, 1).unwrap();
        c.matrix_mut(0, 2)[0] = Complex64::new(0.5, 0.0);
        assert!((c.spectral_radius(0) - 0.5f64.sqrt()).abs() < 1e-12);
        c.scale_poles(0, 0.5);
        assert!((c.spectral_radius(0) - 0.5 * 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn random_draws_are_stable() {
        let c = random_mclp(4, 9, 6, 2, 1.5, 0.9, 11).unwrap();
        for k in 0..9 {
            assert!(c.spectral_radius(k) <= 0.9 + 1e-9);
        }
    }

    #[test]
    fn srr_cases() {
        let cfg = small_cfg();
        let dry = stft(&[synthetic_speech(0.3, 8000.0, 2)], &cfg).unwrap();
        assert_eq!(srr_db(&dry, &dry).unwrap(), SRR_CAP_DB);
        let mut half = dry.clone();
        half.scale(0.5);
        assert_eq!(srr_db(&dry, &half).unwrap(), SRR_CAP_DB);
        // orthogonal residual of equal power: use i * x on alternating bins
        let mut est = dry.clone();
        let mut other = Spectrogram::zeros(1, dry.frames(), cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in other.data_mut() {
            *v = complex_gaussian(&mut rng);
        }
        // remove the component along dry, then match power
        let alpha = linalg::dot_h(dry.data(), other.data()) / dry.energy();
        for (o, x) in other.data_mut().iter_mut().zip(dry.data()) {
            *o -= alpha * x;
        }
        let s = (dry.energy() / other.energy()).sqrt();
        for (e, o) in est.data_mut().iter_mut().zip(other.data()) {
            *e += o * s;
        }
        assert!(srr_db(&dry, &est).unwrap().abs() < 1e-9);
        assert!(srr_db(&Spectrogram::zeros(1, 3, cfg), &Spectrogram::zeros(1, 3, cfg)).is_err());
    }

    #[test]
    fn diffuse_noise_single_mic_and_dc() {
        let cfg = small_cfg();
        let g = circular_array(1, 0.1).unwrap();
        let n = diffuse_noise(&g, &cfg, 4000, 1).unwrap();
        let p = n.energy() / (n.bins() * n.frames()) as f64;
        assert!((p - 1.0).abs() < 0.02, "{p}");

        let g = circular_array(3, 0.1).unwrap();
        let n = diffuse_noise(&g, &cfg, 50, 1).unwrap();
        for i in 0..50 {
            let a = n.get(0, 0, i);
            for m in 1..3 {
                assert!((n.get(m, 0, i) - a).norm() < 1e-2 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn rir_scene_limits_and_determinism() {
        let cfg = StftConfig::default();
        let g = circular_array(4, 0.05).unwrap();
        let dry = synthetic_speech(0.5, 16000.0, 9);
        let a = exp_decay_rir_scene(&dry, &g, 0.8, 0.3, 5.0, 20.0, 42, &cfg).unwrap();
        let b = exp_decay_rir_scene(&dry, &g, 0.8, 0.3, 5.0, 20.0, 42, &cfg).unwrap();
        assert_eq!(a.mixture, b.mixture);

        let dry_e = a.dry.energy();
        let s = exp_decay_rir_scene(&dry, &g, 0.8, 0.3, f64::INFINITY, f64::INFINITY, 42, &cfg).unwrap();
        let s_short = exp_decay_rir_scene(&dry, &g, 0.8, 1e-6, 0.0, f64::INFINITY, 42, &cfg).unwrap();
        // only the error of the multiplicative plane-wave model remains
        assert_eq!(s.noise.energy(), 0.0);
        assert!(s.reverb.energy() < 1e-2 * dry_e);
        assert!(s_short.reverb.energy() < 1e-2 * dry_e);
        assert!(a.reverb.energy() > 0.1 * dry_e);
        let sum = a.direct().add(&a.reverb).unwrap().add(&a.noise).unwrap();
        for (x, y) in sum.data().iter().zip(a.mixture.data()) {
            assert!((x - y).norm() <= 1e-9 * (1.0 + y.norm()));
        }
        assert!(exp_decay_rir_scene(&dry, &g, 0.8, 0.0, 5.0, 20.0, 42, &cfg).is_err());
    }

    #[test]
    fn meta_roundtrip() {
        let m = SceneMeta { kind: "rir".into(), doa_deg: 45.0, snr_db: 20.0, t60_s: 0.5, drr_db: 3.0, seed: 7, order: 8, delay: 2 };
        assert_eq!(SceneMeta::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn fractional_delay_integer_shift() {
        let x: Vec<f64> = (0..200).map(|i| if i == 50 { 1.0 } else { 0.0 }).collect();
        let y = fractional_delay(&x, 3.0);
        assert!((y[53] - 1.0).abs() < 1e-9);
        assert!(y[50].abs() < 1e-9);
    }
}
