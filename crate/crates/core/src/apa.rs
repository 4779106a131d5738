//! Convolutional MPDR beamformer adapted by a two-row affine projection
//! update.
//!
//! Per bin, the stacked filter `w = [w_b; -c_D; ...; -c_L]` (length
//! `Q = M (L - D + 2)`) is applied to the stacked observation
//! `y~ = [y(n); y(n-D); ...; y(n-L)]` as `X = w^H y~`. Each frame solves the
//! two-row system
//!
//! ```text
//! [0]   [y~^H]       [ -X  ]
//! [1] = [a~^H] w  +  [ e_a ]
//! ```
//!
//! with a Kalman gain built from a fixed diagonal filter covariance
//! `diag(phi_b * 1_M, phi_r * 1_{Q-M})`, so the only inverse is 2 x 2 and
//! the cost per frame is linear in `Q`.
//!
//! The stored filter is the complex conjugate of the transpose-convention
//! filter; outputs are identical. With `L = 0` the canceller block is empty
//! and this reduces to a plain MPDR beamformer.

use num_complex::Complex64;

use crate::bench::{NoTally, Tally};
use crate::dsp::BandPlan;
use crate::error::{invalid, Error, Result};
use crate::{db_to_linear, linalg};

/// How the PSD floor measures input power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloorMode {
    /// `eta * ||y||^2 / M`
    #[default]
    MeanPower,
    /// `eta * ||y||^2`
    TotalPower,
}

/// Adaptation constants. Variances are linear and relative to the level
/// produced by the pipeline's input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ApaParams {
    /// Beamformer-coefficient state variance.
    pub phi_b: f64,
    /// Canceller-coefficient state variance.
    pub phi_r: f64,
    /// Directional-constraint error PSD.
    pub phi_a: f64,
    /// PSD floor factor.
    pub eta: f64,
    /// Amount of reverb subtraction, in `[0, 1]`.
    pub alpha_r: f64,
    pub floor: FloorMode,
    pub plan: BandPlan,
}

impl Default for ApaParams {
    fn default() -> Self {
        Self {
            phi_b: db_to_linear(-37.0),
            phi_r: db_to_linear(-40.0),
            phi_a: db_to_linear(-120.0),
            eta: db_to_linear(-25.0),
            alpha_r: 1.0,
            floor: FloorMode::MeanPower,
            plan: BandPlan::default(),
        }
    }
}

impl ApaParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("phi_b", self.phi_b), ("phi_r", self.phi_r), ("phi_a", self.phi_a), ("eta", self.eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha_r) {
            return Err(invalid(format!("alpha_r must lie in [0, 1], got {}", self.alpha_r)));
        }
        self.plan.validate()
    }
}

/// Ring buffer of the last `L` microphone frames, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    mics: usize,
    len: usize,
    head: usize,
    data: Vec<Complex64>,
}

impl History {
    pub fn new(mics: usize, len: usize) -> Self {
        Self { mics, len, head: 0, data: vec![Complex64::new(0.0, 0.0); mics * len] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `y(n - lag)` for `lag` in `1..=len`, where `n` is the frame about to be pushed.
    pub fn lag(&self, lag: usize) -> &[Complex64] {
        debug_assert!(lag >= 1 && lag <= self.len);
        let slot = (self.head + self.len - lag) % self.len;
        &self.data[slot * self.mics..(slot + 1) * self.mics]
    }

    pub fn push(&mut self, y: &[Complex64]) {
        if self.len == 0 {
            return;
        }
        let s = self.head * self.mics;
        self.data[s..s + self.mics].copy_from_slice(y);
        self.head = (self.head + 1) % self.len;
    }

    pub fn clear(&mut self) {
        self.data.fill(Complex64::new(0.0, 0.0));
        self.head = 0;
    }

    /// Writes `[y(n-D); ...; y(n-L)]` into `out`.
    pub fn stack_into(&self, delay: usize, out: &mut [Complex64]) {
        for (i, lag) in (delay..=self.len).enumerate() {
            out[i * self.mics..(i + 1) * self.mics].copy_from_slice(self.lag(lag));
        }
    }
}

/// Stacked observation of one bin at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `[y(n); y(n-D); ...; y(n-L)]`, length `Q`.
    pub y_tilde: Vec<Complex64>,
    /// The RTF `a`; the stacked `a~` is this followed by `Q - M` zeros.
    pub a: Vec<Complex64>,
}

impl Observation {
    pub fn a_tilde(&self) -> Vec<Complex64> {
        let mut v = vec![Complex64::new(0.0, 0.0); self.y_tilde.len()];
        v[..self.a.len()].copy_from_slice(&self.a);
        v
    }
}

/// Adaptive state of one frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ApaState {
    mics: usize,
    order: usize,
    delay: usize,
    w: Vec<Complex64>,
    history: History,
    scratch: Vec<Complex64>,
}

impl ApaState {
    /// Initial filter: `w_b = a / ||a||^2` (so `a~^H w = 1`), canceller zero,
    /// history zero. `order` is `L` (0 for a plain beamformer), `delay` is `D`.
    pub fn new(a: &[Complex64], order: usize, delay: usize) -> Result<Self> {
        let mics = a.len();
        if mics == 0 {
            return Err(invalid("empty steering vector"));
        }
        if order != 0 && !(order > delay && delay >= 1) {
            return Err(invalid(format!("need L > D >= 1 or L = 0, got L={order}, D={delay}")));
        }
        let nrm = linalg::norm_sqr(a);
        if nrm == 0.0 {
            return Err(invalid("zero-norm steering vector"));
        }
        let q = Self::q_for(mics, order, delay);
        let mut w = vec![Complex64::new(0.0, 0.0); q];
        for (wi, ai) in w.iter_mut().zip(a) {
            *wi = ai / nrm;
        }
        Ok(Self {
            mics,
            order,
            delay,
            w,
            history: History::new(mics, order),
            scratch: vec![Complex64::new(0.0, 0.0); q],
        })
    }

    fn q_for(mics: usize, order: usize, delay: usize) -> usize {
        if order == 0 {
            mics
        } else {
            mics * (order - delay + 2)
        }
    }

    pub fn q(&self) -> usize {
        self.w.len()
    }

    pub fn mics(&self) -> usize {
        self.mics
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// The stacked filter `[w_b; -c_D; ...; -c_L]`.
    pub fn filter(&self) -> &[Complex64] {
        &self.w
    }

    pub fn filter_mut(&mut self) -> &mut [Complex64] {
        &mut self.w
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn push_history(&mut self, y: &[Complex64]) {
        self.history.push(y);
    }

    /// Zeroes the history, keeping the filter (used between passes).
    pub fn reset_history(&mut self) {
        self.history.clear();
    }

    /// `|1 - a~^H w|`
    pub fn constraint_residual(&self, a: &[Complex64]) -> f64 {
        (Complex64::new(1.0, 0.0) - linalg::dot_h(a, &self.w[..self.mics])).norm()
    }

    fn check_dims(&self, y: &[Complex64], a: &[Complex64]) -> Result<()> {
        if y.len() != self.mics || a.len() != self.mics {
            return Err(invalid(format!(
                "state has {} mics, got y of {} and a of {}",
                self.mics,
                y.len(),
                a.len()
            )));
        }
        Ok(())
    }

    fn fill_scratch(&mut self, y: &[Complex64]) {
        self.scratch[..self.mics].copy_from_slice(y);
        if self.order > 0 {
            self.history.stack_into(self.delay, &mut self.scratch[self.mics..]);
        }
    }

    /// Builds `y~(n)` from `y(n)` and the history. The history is not advanced.
    pub fn stack_observation(&self, y: &[Complex64], a: &[Complex64]) -> Result<Observation> {
        self.check_dims(y, a)?;
        let mut y_tilde = vec![Complex64::new(0.0, 0.0); self.q()];
        y_tilde[..self.mics].copy_from_slice(y);
        if self.order > 0 {
            self.history.stack_into(self.delay, &mut y_tilde[self.mics..]);
        }
        Ok(Observation { y_tilde, a: a.to_vec() })
    }
}

/// Diagonal of the filter covariance at position `i`.
#[inline]
fn phi_w(i: usize, mics: usize, params: &ApaParams) -> f64 {
    if i < mics {
        params.phi_b
    } else {
        params.phi_r
    }
}

/// A-priori speech PSD `|w(n-1)^H y~(n)|^2`.
pub fn speech_psd_estimate(state: &ApaState, obs: &Observation) -> f64 {
    linalg::dot_h(&state.w, &obs.y_tilde).norm_sqr()
}

/// `max(phi, eta * P)` with `P` the mean (or total) power of `y`.
pub fn psd_floor(phi: f64, y: &[Complex64], eta: f64, mode: FloorMode) -> f64 {
    let p = linalg::norm_sqr(y);
    let p = match mode {
        FloorMode::MeanPower if !y.is_empty() => p / y.len() as f64,
        _ => p,
    };
    phi.max(eta * p)
}

/// `X_b - alpha * min(|X_r|, |X_b|) * X_r / |X_r|`; returns `X_b` if `X_r = 0`.
#[inline]
pub fn limited_output(x_b: Complex64, x_r: Complex64, alpha_r: f64) -> Complex64 {
    let r = x_r.norm();
    if r == 0.0 {
        return x_b;
    }
    x_b - x_r * (alpha_r * r.min(x_b.norm()) / r)
}

/// Solution of the 2 x 2 innovation system, `g = S^-1 e`.
struct Innovation {
    g0: Complex64,
    g1: Complex64,
}

/// `S = F Phi_w F^H + diag(phi_x, phi_a)` and `g = S^-1 (d - F w)`.
///
/// `prior` is `w^H y~` (the a-priori output); the first innovation entry is
/// its negated conjugate.
fn solve_innovation<T: Tally>(
    w: &[Complex64],
    y_tilde: &[Complex64],
    a: &[Complex64],
    prior: Complex64,
    phi_x: f64,
    params: &ApaParams,
    tally: &mut T,
) -> Result<Innovation> {
    let m = a.len();
    let q = y_tilde.len();
    let mut s11 = phi_x;
    let mut y_b = 0.0;
    for v in &y_tilde[..m] {
        y_b += v.norm_sqr();
    }
    let mut y_r = 0.0;
    for v in &y_tilde[m..] {
        y_r += v.norm_sqr();
    }
    s11 += params.phi_b * y_b + params.phi_r * y_r;
    tally.cmac(q as u64);
    let s22 = params.phi_b * linalg::norm_sqr(a) + params.phi_a;
    let s12 = linalg::dot_h(&y_tilde[..m], a) * params.phi_b;
    tally.cmac(2 * m as u64);

    let e0 = -prior.conj();
    let e1 = Complex64::new(1.0, 0.0) - linalg::dot_h(a, &w[..m]);
    tally.cmac(m as u64);

    let det = s11 * s22 - s12.norm_sqr();
    if s11 == 0.0 && s12 == Complex64::new(0.0, 0.0) && e0 == Complex64::new(0.0, 0.0) && s22 > 0.0 {
        // silent frame with no output-power information: only the constraint row
        tally.div(1);
        return Ok(Innovation { g0: Complex64::new(0.0, 0.0), g1: e1 / s22 });
    }
    if !(det > 0.0 && det.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "innovation covariance is singular (det = {det:e})"
        )));
    }
    let inv_det = 1.0 / det;
    tally.cmac(6);
    tally.div(2);
    let g0 = (e0 * s22 - s12 * e1) * inv_det;
    let g1 = (e1 * s11 - s12.conj() * e0) * inv_det;
    tally.cmac(4);
    Ok(Innovation { g0, g1 })
}

/// Kalman gain `K = Phi_w F^H S^-1` as two length-`Q` columns.
///
/// The adaptive path never forms `K`; this is exposed for verification.
pub fn kalman_gain(obs: &Observation, phi_x: f64, params: &ApaParams) -> Result<[Vec<Complex64>; 2]> {
    let m = obs.a.len();
    let q = obs.y_tilde.len();
    let s11 = phi_x
        + obs.y_tilde.iter().enumerate().map(|(i, v)| phi_w(i, m, params) * v.norm_sqr()).sum::<f64>();
    let s22 = params.phi_b * linalg::norm_sqr(&obs.a) + params.phi_a;
    let s12 = linalg::dot_h(&obs.y_tilde[..m], &obs.a) * params.phi_b;
    let det = s11 * s22 - s12.norm_sqr();
    if !(det > 0.0 && det.is_finite()) {
        return Err(Error::NumericalFailure(format!("singular 2x2 system (det = {det:e})")));
    }
    // S^-1 = [[s22, -s12], [-conj(s12), s11]] / det
    let inv = [
        [Complex64::new(s22 / det, 0.0), -s12 / det],
        [-s12.conj() / det, Complex64::new(s11 / det, 0.0)],
    ];
    let a_tilde = obs.a_tilde();
    let col = |j: usize| -> Vec<Complex64> {
        (0..q)
            .map(|i| (obs.y_tilde[i] * inv[0][j] + a_tilde[i] * inv[1][j]) * phi_w(i, m, params))
            .collect()
    };
    Ok([col(0), col(1)])
}

fn apply_update<T: Tally>(w: &mut [Complex64], y_tilde: &[Complex64], a: &[Complex64], g: &Innovation, params: &ApaParams, tally: &mut T) {
    let m = a.len();
    for i in 0..m {
        w[i] += (y_tilde[i] * g.g0 + a[i] * g.g1) * params.phi_b;
    }
    for i in m..w.len() {
        w[i] += y_tilde[i] * g.g0 * params.phi_r;
    }
    tally.cmac((w.len() + m) as u64);
    tally.rmac(w.len() as u64);
}

/// One filter update `w(n) = w(n-1) + K (d - F w(n-1))`.
pub fn apa_update(state: &mut ApaState, obs: &Observation, phi_x: f64, params: &ApaParams) -> Result<()> {
    apa_update_counted(state, obs, phi_x, params, &mut NoTally)
}

/// [`apa_update`] with operation counting.
pub fn apa_update_counted<T: Tally>(
    state: &mut ApaState,
    obs: &Observation,
    phi_x: f64,
    params: &ApaParams,
    tally: &mut T,
) -> Result<()> {
    if obs.y_tilde.len() != state.q() || obs.a.len() != state.mics {
        return Err(invalid(format!(
            "observation is {}/{}, state expects Q={} M={}",
            obs.y_tilde.len(),
            obs.a.len(),
            state.q(),
            state.mics
        )));
    }
    let prior = linalg::dot_h(&state.w, &obs.y_tilde);
    tally.cmac(state.q() as u64);
    let g = solve_innovation(&state.w, &obs.y_tilde, &obs.a, prior, phi_x, params, tally)?;
    apply_update(&mut state.w, &obs.y_tilde, &obs.a, &g, params, tally);
    Ok(())
}

/// Per-frame outputs of one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutput {
    /// Final (limited) estimate.
    pub x: Complex64,
    /// Beamformer branch `w_b^H y(n)`.
    pub x_b: Complex64,
    /// Predicted reverb `sum c_l^H y(n-l)`.
    pub x_r: Complex64,
    /// PSD used in the update (after gain and floor).
    pub phi_x: f64,
}

/// Runs one frame of one bin: PSD estimate, optional gain, floor, update,
/// a-posteriori outputs and limiter, then pushes `y(n)` into the history.
pub fn process_bin_frame(
    state: &mut ApaState,
    y: &[Complex64],
    a: &[Complex64],
    gain: f64,
    params: &ApaParams,
) -> Result<FrameOutput> {
    state.check_dims(y, a)?;
    state.fill_scratch(y);
    let m = state.mics;
    let prior = linalg::dot_h(&state.w, &state.scratch);
    let mut phi = prior.norm_sqr();
    if gain != 1.0 {
        phi = crate::psd::apply_gain(phi, gain);
    }
    let phi = psd_floor(phi, y, params.eta, params.floor);
    let g = solve_innovation(&state.w, &state.scratch, a, prior, phi, params, &mut NoTally)?;
    apply_update(&mut state.w, &state.scratch, a, &g, params, &mut NoTally);

    let x_b = linalg::dot_h(&state.w[..m], y);
    let x_r = -linalg::dot_h(&state.w[m..], &state.scratch[m..]);
    let x = limited_output(x_b, x_r, params.alpha_r);
    state.history.push(y);
    Ok(FrameOutput { x, x_b, x_r, phi_x: phi })
}

/// Processes one STFT frame across all bins.
///
/// `frame` is bin-major (`bins x mics`), `steering` yields `a(k)`, and
/// `gains[k]` is the PSD gain for bin `k` (pass `None` for identity).
pub fn process_frame<'a>(
    states: &mut [ApaState],
    frame: &[Complex64],
    steering: impl Fn(usize) -> &'a [Complex64],
    params: &ApaParams,
    gains: Option<&[f64]>,
) -> Result<Vec<Complex64>> {
    let Some(m) = states.first().map(ApaState::mics) else {
        return Ok(Vec::new());
    };
    if frame.len() != states.len() * m {
        return Err(invalid(format!(
            "frame has {} values, expected {} bins x {m} mics",
            frame.len(),
            states.len()
        )));
    }
    states
        .iter_mut()
        .enumerate()
        .map(|(k, st)| {
            let g = gains.map_or(1.0, |g| g[k]);
            Ok(process_bin_frame(st, &frame[k * m..(k + 1) * m], steering(k), g, params)?.x)
        })
        .collect()
}
