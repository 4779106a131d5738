//! Fixed superdirective beamformer followed by an adaptive reverb canceller.
//!
//! The beamformer `w_sd` is designed once from the diffuse coherence, so the
//! observation system collapses to one row: the beamformer output `d(n)` is
//! predicted from the delayed frames `f = [y(n-D); ...; y(n-L)]` by the
//! canceller `w_rc`, updated with a scalar-denominator gain.

use num_complex::Complex64;

use crate::apa::{limited_output, psd_floor, ApaParams, History};
use crate::bench::{NoTally, Tally};
use crate::error::{invalid, Result};
use crate::linalg;

/// Canceller state of one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RcState {
    w_sd: Vec<Complex64>,
    w_rc: Vec<Complex64>,
    history: History,
    delay: usize,
    f: Vec<Complex64>,
}

impl RcState {
    /// Requires `L > D >= 1`; the canceller starts at zero.
    pub fn new(w_sd: Vec<Complex64>, order: usize, delay: usize) -> Result<Self> {
        let m = w_sd.len();
        if m == 0 {
            return Err(invalid("empty beamformer"));
        }
        if !(order > delay && delay >= 1) {
            return Err(invalid(format!("canceller needs L > D >= 1, got L={order}, D={delay}")));
        }
        let len = m * (order - delay + 1);
        Ok(Self {
            w_sd,
            w_rc: vec![Complex64::new(0.0, 0.0); len],
            history: History::new(m, order),
            delay,
            f: vec![Complex64::new(0.0, 0.0); len],
        })
    }

    pub fn mics(&self) -> usize {
        self.w_sd.len()
    }

    pub fn w_sd(&self) -> &[Complex64] {
        &self.w_sd
    }

    /// Stacked prediction filters `[c_D; ...; c_L]`.
    pub fn canceller(&self) -> &[Complex64] {
        &self.w_rc
    }

    pub fn canceller_mut(&mut self) -> &mut [Complex64] {
        &mut self.w_rc
    }

    pub fn push_history(&mut self, y: &[Complex64]) {
        self.history.push(y);
    }

    pub fn reset_history(&mut self) {
        self.history.clear();
    }

    /// Replaces the fixed beamformer (e.g. after a steering refresh).
    pub fn set_w_sd(&mut self, w_sd: &[Complex64]) {
        self.w_sd.copy_from_slice(w_sd);
    }

    /// `[y(n-D); ...; y(n-L)]` from the current history.
    pub fn delayed_stack(&self) -> Vec<Complex64> {
        let mut f = vec![Complex64::new(0.0, 0.0); self.w_rc.len()];
        self.history.stack_into(self.delay, &mut f);
        f
    }
}

/// Outputs of one canceller step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcOutput {
    pub x: Complex64,
    /// Beamformer output `d(n) = w_sd^H y(n)`.
    pub d: Complex64,
    /// Reverb prediction with the updated canceller.
    pub x_r: Complex64,
}

/// `|w_sd^H y(n) - w_rc(n-1)^H f(n)|^2`, then floored.
pub fn rc_speech_psd(state: &RcState, y: &[Complex64], params: &ApaParams) -> f64 {
    let d = linalg::dot_h(&state.w_sd, y);
    let f = state.delayed_stack();
    let e = d - linalg::dot_h(&state.w_rc, &f);
    psd_floor(e.norm_sqr(), y, params.eta, params.floor)
}

/// Scalar update `w_rc += k * conj(d - w_rc^H f)` with
/// `k = phi_r f / (phi_r ||f||^2 + phi_x)`. Does not touch the history.
pub fn rc_update(state: &mut RcState, y: &[Complex64], phi_x: f64, phi_r: f64) -> Complex64 {
    rc_update_counted(state, y, phi_x, phi_r, &mut NoTally)
}

/// [`rc_update`] with operation counting. Returns `d(n)`.
pub fn rc_update_counted<T: Tally>(state: &mut RcState, y: &[Complex64], phi_x: f64, phi_r: f64, tally: &mut T) -> Complex64 {
    let m = state.mics();
    state.history.stack_into(state.delay, &mut state.f);
    let d = linalg::dot_h(&state.w_sd, y);
    tally.cmac(m as u64);
    let e = d - linalg::dot_h(&state.w_rc, &state.f);
    tally.cmac(state.f.len() as u64);
    step(state, e, phi_x, phi_r, tally);
    d
}

/// Applies the update for a known prediction error `e`; `state.f` must be current.
fn step<T: Tally>(state: &mut RcState, e: Complex64, phi_x: f64, phi_r: f64, tally: &mut T) {
    let ff = linalg::norm_sqr(&state.f);
    tally.cmac(state.f.len() as u64);
    let denom = phi_r * ff + phi_x;
    if denom > 0.0 && ff > 0.0 {
        let g = e.conj() * (phi_r / denom);
        tally.div(1);
        for (w, f) in state.w_rc.iter_mut().zip(&state.f) {
            *w += f * g;
        }
        tally.cmac(state.f.len() as u64);
    }
}

/// Full per-frame step: PSD, optional gain, floor, update, limiter, history push.
pub fn process_bin_frame(state: &mut RcState, y: &[Complex64], gain: f64, params: &ApaParams) -> Result<RcOutput> {
    if y.len() != state.mics() {
        return Err(invalid(format!("expected {} mics, got {}", state.mics(), y.len())));
    }
    state.history.stack_into(state.delay, &mut state.f);
    let d = linalg::dot_h(&state.w_sd, y);
    let prior = d - linalg::dot_h(&state.w_rc, &state.f);
    let mut phi = prior.norm_sqr();
    if gain != 1.0 {
        phi = crate::psd::apply_gain(phi, gain);
    }
    let phi = psd_floor(phi, y, params.eta, params.floor);
    step(state, prior, phi, params.phi_r, &mut NoTally);
    let x_r = linalg::dot_h(&state.w_rc, &state.f);
    let x = limited_output(d, x_r, params.alpha_r);
    state.history.push(y);
    Ok(RcOutput { x, d, x_r })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dims_and_errors() {
        let s = RcState::new(vec![c(1.0, 0.0); 4], 6, 2).unwrap();
        assert_eq!(s.canceller().len(), 4 * 5);
        assert!(RcState::new(vec![c(1.0, 0.0)], 0, 1).is_err());
        assert!(RcState::new(vec![c(1.0, 0.0)], 2, 2).is_err());
    }

    #[test]
    fn zero_history_passes_beamformer_through() {
        let mut s = RcState::new(vec![c(0.5, 0.0), c(0.5, 0.0)], 3, 1).unwrap();
        let y = [c(1.0, 2.0), c(3.0, -1.0)];
        let out = process_bin_frame(&mut s, &y, 1.0, &ApaParams::default()).unwrap();
        assert_eq!(out.x, out.d);
        assert_eq!(out.d, c(2.0, 0.5));
        assert!(s.canceller().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn scalar_oracle_case() {
        // M=1, L=2, D=1; f = [y(n-1), y(n-2)] = [1, 0]; d = 2
        let mut s = RcState::new(vec![c(1.0, 0.0)], 2, 1).unwrap();
        s.push_history(&[c(0.0, 0.0)]);
        s.push_history(&[c(1.0, 0.0)]);
        assert_eq!(s.delayed_stack(), vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let d = rc_update(&mut s, &[c(2.0, 0.0)], 1.0, 1.0);
        assert_eq!(d, c(2.0, 0.0));
        assert_eq!(s.canceller(), &[c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn vanishing_phi_r_freezes() {
        let mut s = RcState::new(vec![c(1.0, 0.0)], 2, 1).unwrap();
        s.push_history(&[c(1.0, 0.0)]);
        rc_update(&mut s, &[c(2.0, 0.0)], 1.0, 0.0);
        assert!(s.canceller().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn psd_matches_dot_products() {
        let mut s = RcState::new(vec![c(0.3, 0.1), c(-0.2, 0.4)], 2, 1).unwrap();
        s.push_history(&[c(1.0, -1.0), c(0.5, 0.2)]);
        s.push_history(&[c(-0.7, 0.1), c(0.0, 1.0)]);
        s.canceller_mut().copy_from_slice(&[c(0.1, 0.2), c(-0.3, 0.0), c(0.05, -0.4), c(0.2, 0.2)]);
        let y = [c(0.9, 0.4), c(-1.1, 0.3)];
        let p = ApaParams { eta: 1e-30, ..ApaParams::default() };
        // brute force: f = [y(n-1); y(n-2)]
        let f = [c(-0.7, 0.1), c(0.0, 1.0), c(1.0, -1.0), c(0.5, 0.2)];
        let mut d = c(0.0, 0.0);
        for i in 0..2 {
            d += s.w_sd()[i].conj() * y[i];
        }
        let mut pred = c(0.0, 0.0);
        for i in 0..4 {
            pred += s.canceller()[i].conj() * f[i];
        }
        let expect = (d - pred).norm_sqr();
        assert!((rc_speech_psd(&s, &y, &p) - expect).abs() < 1e-14);

        s.canceller_mut().fill(c(0.0, 0.0));
        assert!((rc_speech_psd(&s, &y, &p) - d.norm_sqr()).abs() < 1e-14);
    }

    #[test]
    fn floor_kicks_in_when_prediction_is_exact() {
        // w_sd = [1], history y(n-1) = 1, canceller 2 -> prediction 2 = d
        let mut s = RcState::new(vec![c(1.0, 0.0)], 2, 1).unwrap();
        s.push_history(&[c(0.0, 0.0)]);
        s.push_history(&[c(1.0, 0.0)]);
        s.canceller_mut()[0] = c(2.0, 0.0);
        let p = ApaParams { eta: 0.1, ..ApaParams::default() };
        let y = [c(2.0, 0.0)];
        assert!((rc_speech_psd(&s, &y, &p) - 0.4).abs() < 1e-15);
    }
}
