//! Multiply-accumulate accounting and complexity measurements.
//!
//! One complex multiply-add counts as one MAC. Adaptive updates are generic
//! over [`Tally`], so the uninstrumented path uses [`NoTally`] and compiles
//! to nothing.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apa::{self, ApaParams, ApaState};
use crate::array::{circular_array, plane_wave_steering, SPEED_OF_SOUND};
use crate::dsp::{stft, BandPlan, StftConfig};
use crate::error::Result;
use crate::pipeline::{self, EnhanceConfig, Method};
use crate::psd::IdentityGain;
use crate::sdmvdr::{self, RcState};

/// Sink for operation counts.
pub trait Tally {
    fn cmac(&mut self, n: u64);
    fn rmac(&mut self, n: u64);
    fn div(&mut self, n: u64);
}

/// Discards all counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoTally;

impl Tally for NoTally {
    #[inline(always)]
    fn cmac(&mut self, _: u64) {}
    #[inline(always)]
    fn rmac(&mut self, _: u64) {}
    #[inline(always)]
    fn div(&mut self, _: u64) {}
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub complex_macs: u64,
    pub real_macs: u64,
    pub divisions: u64,
}

impl Counts {
    /// Complex plus real MACs; divisions are reported separately.
    pub fn macs(&self) -> u64 {
        self.complex_macs + self.real_macs
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts {
            complex_macs: self.complex_macs + o.complex_macs,
            real_macs: self.real_macs + o.real_macs,
            divisions: self.divisions + o.divisions,
        }
    }
}

/// Scoped operation counter. Counts made inside a child scope belong to the
/// child; a scope's total is its own counts plus all of its children.
#[derive(Debug, Clone, Default)]
pub struct MacCounter {
    pub label: String,
    own: Counts,
    children: Vec<MacCounter>,
}

impl MacCounter {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into(), ..Default::default() }
    }

    /// Runs `f` with a fresh child counter that is attached afterwards.
    pub fn scope<R>(&mut self, label: impl Into<String>, f: impl FnOnce(&mut MacCounter) -> R) -> R {
        let mut child = MacCounter::new(label);
        let r = f(&mut child);
        self.children.push(child);
        r
    }

    pub fn own(&self) -> Counts {
        self.own
    }

    pub fn children(&self) -> &[MacCounter] {
        &self.children
    }

    pub fn total(&self) -> Counts {
        self.children.iter().fold(self.own, |acc, c| acc + c.total())
    }
}

impl Tally for MacCounter {
    fn cmac(&mut self, n: u64) {
        self.own.complex_macs += n;
    }
    fn rmac(&mut self, n: u64) {
        self.own.real_macs += n;
    }
    fn div(&mut self, n: u64) {
        self.own.divisions += n;
    }
}

fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect()
}

/// Stacked filter length for `m` mics, order `l`, delay `d`.
pub fn filter_len(m: usize, l: usize, d: usize) -> usize {
    if l == 0 {
        m
    } else {
        m * (l - d + 2)
    }
}

/// Exact operation counts of one two-row update at the given dimensions,
/// measured on seeded random data.
pub fn count_apa_update(m: usize, l: usize, d: usize) -> Result<Counts> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ (m * 1000 + l * 10 + d) as u64);
    let a = random_cvec(&mut rng, m);
    let mut state = ApaState::new(&a, l, d)?;
    for _ in 0..l {
        state.push_history(&random_cvec(&mut rng, m));
    }
    let y = random_cvec(&mut rng, m);
    let obs = state.stack_observation(&y, &a)?;
    let params = ApaParams::default();
    let mut counter = MacCounter::new("apa_update");
    apa::apa_update_counted(&mut state, &obs, 1.0, &params, &mut counter)?;
    Ok(counter.total())
}

/// Exact operation counts of one single-row canceller update.
pub fn count_rc_update(m: usize, l: usize, d: usize) -> Result<Counts> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0de ^ (m * 1000 + l * 10 + d) as u64);
    let w_sd = random_cvec(&mut rng, m);
    let mut state = RcState::new(w_sd, l, d)?;
    for _ in 0..l {
        state.push_history(&random_cvec(&mut rng, m));
    }
    let y = random_cvec(&mut rng, m);
    let mut counter = MacCounter::new("rc_update");
    sdmvdr::rc_update_counted(&mut state, &y, 1.0, ApaParams::default().phi_r, &mut counter);
    Ok(counter.total())
}

/// Least-squares slope of `log(macs)` against `log(q)`.
pub fn power_law_exponent(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (sx, sy, sxx, sxy) = points.iter().fold((0.0, 0.0, 0.0, 0.0), |(sx, sy, sxx, sxy), &(q, c)| {
        let (x, y) = (q.ln(), c.ln());
        (sx + x, sy + y, sxx + x * x, sxy + x * y)
    });
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// One row of the growth-order comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub q: usize,
    pub apa: f64,
    pub quadratic: f64,
    pub dense_inverse: f64,
}

/// Measured APA counts next to `c * Q^2` (recursive-inversion model) and
/// `c * Q^2.37` (dense-inverse model). Each model's constant is chosen so it
/// equals the measured count at the smallest `Q`.
///
/// `dims` lists `(M, L, D)` triples; rows come back sorted by `Q`.
pub fn reference_curves(dims: &[(usize, usize, usize)]) -> Result<Vec<CurvePoint>> {
    let mut measured: Vec<(usize, f64)> = dims
        .iter()
        .map(|&(m, l, d)| Ok((filter_len(m, l, d), count_apa_update(m, l, d)?.macs() as f64)))
        .collect::<Result<_>>()?;
    measured.sort_by_key(|p| p.0);
    let Some(&(q0, c0)) = measured.first() else {
        return Ok(Vec::new());
    };
    let q0 = q0 as f64;
    let c_quad = c0 / q0.powi(2);
    let c_dense = c0 / q0.powf(2.37);
    Ok(measured
        .into_iter()
        .map(|(q, apa)| CurvePoint {
            q,
            apa,
            quadratic: c_quad * (q as f64).powi(2),
            dense_inverse: c_dense * (q as f64).powf(2.37),
        })
        .collect())
}

/// Result of a wall-clock measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub method: Method,
    pub mics: usize,
    pub order: usize,
    pub delay: usize,
    pub q: usize,
    pub macs: u64,
    pub seconds_per_audio_second: f64,
}

/// MACs per bin update for `method` at the given dimensions.
pub fn method_macs(method: Method, m: usize, l: usize, d: usize) -> Result<u64> {
    Ok(match method {
        Method::RefMic => 0,
        Method::DelaySum | Method::SdMvdr => m as u64,
        Method::MpdrApa => count_apa_update(m, 0, d)?.macs(),
        Method::ConvMpdrApa => count_apa_update(m, l, d)?.macs(),
        Method::ConvSdMvdr => count_rc_update(m, l, d)?.macs() + m as u64,
    })
}

/// Median beamformer-stage time per second of audio (`runs >= 1`).
///
/// The STFT, localization and synthesis are excluded; the clock covers
/// weight design plus filtering on a precomputed spectrogram, sequentially.
pub fn wallclock(method: Method, m: usize, orders: &[usize], audio_seconds: f64, runs: usize) -> Result<f64> {
    let cfg = StftConfig::default();
    let geom = circular_array(m, 0.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let len = (audio_seconds * cfg.sample_rate) as usize;
    let audio: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..len).map(|_| 0.1 * (rng.random::<f64>() - 0.5)).collect())
        .collect();
    let spec = stft(&audio, &cfg)?;
    let steering = plane_wave_steering(&geom, 0.5, 0.0, &cfg, SPEED_OF_SOUND);
    let base = BandPlan::default();
    let plan = BandPlan {
        orders: if orders.len() == base.orders.len() { orders.to_vec() } else { vec![orders[0]; base.orders.len()] },
        ..base
    };
    let mut config = EnhanceConfig::new(method);
    config.params.plan = plan;
    config.prior_pass = false;
    config.threads = 1;
    let mut times = Vec::with_capacity(runs.max(1));
    for _ in 0..runs.max(1) {
        let t0 = Instant::now();
        let out = pipeline::enhance_spectrogram(&spec, &geom, &steering.clone().into(), &config, &IdentityGain)?;
        std::hint::black_box(&out);
        times.push(t0.elapsed().as_secs_f64() / audio_seconds);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

/// Timing sweep over prediction orders; one row per `(method, L)`.
/// Non-convolutional methods yield a single `L = 0` row.
pub fn wallclock_sweep(
    method: Method,
    m: usize,
    orders: &[usize],
    audio_seconds: f64,
    runs: usize,
) -> Result<Vec<Timing>> {
    let d = BandPlan::default().delay;
    let orders: Vec<usize> = if method.is_convolutional() { orders.to_vec() } else { vec![0] };
    orders
        .into_iter()
        .map(|l| {
            Ok(Timing {
                method,
                mics: m,
                order: l,
                delay: d,
                q: filter_len(m, if method.is_convolutional() { l } else { 0 }, d),
                macs: method_macs(method, m, l, d)?,
                seconds_per_audio_second: wallclock(method, m, &[l], audio_seconds, runs)?,
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "method,M,L,D,Q,macs,seconds_per_audio_second";

/// One CSV line; a non-finite time (counts only) leaves the last field empty.
pub fn timing_csv_row(t: &Timing) -> String {
    let secs = if t.seconds_per_audio_second.is_finite() { t.seconds_per_audio_second.to_string() } else { String::new() };
    format!(
        "{},{},{},{},{},{},{}",
        t.method.name(),
        t.mics,
        t.order,
        t.delay,
        t.q,
        t.macs,
        secs
    )
}
