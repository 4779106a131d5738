//! End-to-end enhancement: level normalization, STFT, steering, per-bin
//! processing with the selected method, synthesis.
//!
//! Bins are independent, so per-bin work is distributed with
//! [`crate::par::map_range`]; output is bit-identical for any thread count.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::apa::{self, ApaParams, ApaState};
use crate::array::{
    diffuse_coherence, plane_wave_steering, srp_phat_localize, ArrayGeometry, SrpGrid, SteeringVector, SPEED_OF_SOUND,
};
use crate::dsp::{istft, stft, Spectrogram, StftConfig};
use crate::error::{invalid, Result};
use crate::fixed::{self, FixedWeights, DEFAULT_LOADING};
use crate::par;
use crate::psd::{self, GainProvider};
use crate::sdmvdr::{self, RcState};

/// Processing method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    RefMic,
    DelaySum,
    SdMvdr,
    MpdrApa,
    ConvMpdrApa,
    ConvSdMvdr,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::RefMic,
        Method::DelaySum,
        Method::SdMvdr,
        Method::MpdrApa,
        Method::ConvMpdrApa,
        Method::ConvSdMvdr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RefMic => "ref-mic",
            Method::DelaySum => "delay-sum",
            Method::SdMvdr => "sd-mvdr",
            Method::MpdrApa => "mpdr-apa",
            Method::ConvMpdrApa => "conv-mpdr-apa",
            Method::ConvSdMvdr => "conv-sdmvdr",
        }
    }

    pub fn is_convolutional(self) -> bool {
        matches!(self, Method::ConvMpdrApa | Method::ConvSdMvdr)
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Method::MpdrApa | Method::ConvMpdrApa | Method::ConvSdMvdr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                invalid(format!("unknown method '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// Steering vectors over time: block `i` applies from its start frame until
/// the next block starts.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringTrack {
    blocks: Vec<(usize, SteeringVector)>,
}

impl SteeringTrack {
    pub fn new(blocks: Vec<(usize, SteeringVector)>) -> Result<Self> {
        if blocks.first().map(|b| b.0) != Some(0) {
            return Err(invalid("first steering block must start at frame 0"));
        }
        if blocks.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(invalid("steering blocks must have increasing start frames"));
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[(usize, SteeringVector)] {
        &self.blocks
    }

    pub fn block_at(&self, frame: usize) -> usize {
        self.blocks.partition_point(|b| b.0 <= frame) - 1
    }

    pub fn first(&self) -> &SteeringVector {
        &self.blocks[0].1
    }
}

impl From<SteeringVector> for SteeringTrack {
    fn from(a: SteeringVector) -> Self {
        Self { blocks: vec![(0, a)] }
    }
}

/// Everything that controls a run apart from the input itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceConfig {
    pub method: Method,
    pub params: ApaParams,
    /// Diagonal loading for the superdirective design.
    pub loading: f64,
    pub speed_of_sound: f64,
    /// Run the utterance twice, keeping the adapted filters from the first pass.
    pub prior_pass: bool,
    /// Worker threads for bin-parallel processing (`1` = sequential, `0` = all cores).
    pub threads: usize,
    /// Re-localize every this many frames (`None` = once per utterance).
    pub doa_block_frames: Option<usize>,
    pub grid: SrpGrid,
}

impl EnhanceConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            params: ApaParams::default(),
            loading: DEFAULT_LOADING,
            speed_of_sound: SPEED_OF_SOUND,
            prior_pass: true,
            threads: 0,
            doa_block_frames: None,
            grid: SrpGrid::default(),
        }
    }

    /// Band plan actually used by `method` (all orders zero for `mpdr-apa`).
    pub fn effective_plan(&self) -> crate::dsp::BandPlan {
        match self.method {
            Method::MpdrApa => self.params.plan.beamformer_only(),
            _ => self.params.plan.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.loading >= 0.0) {
            return Err(invalid(format!("loading must be non-negative, got {}", self.loading)));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(invalid("speed of sound must be positive"));
        }
        if self.doa_block_frames == Some(0) {
            return Err(invalid("DOA block length must be at least one frame"));
        }
        Ok(())
    }
}

fn design_weights(
    method: Method,
    track: &SteeringTrack,
    geom: &ArrayGeometry,
    stft_cfg: &StftConfig,
    config: &EnhanceConfig,
) -> Result<Vec<FixedWeights>> {
    match method {
        Method::DelaySum => track.blocks.iter().map(|(_, a)| fixed::delay_and_sum(a)).collect(),
        Method::SdMvdr | Method::ConvSdMvdr => {
            let gamma = diffuse_coherence(geom, stft_cfg, config.speed_of_sound);
            track
                .blocks
                .iter()
                .map(|(_, a)| fixed::superdirective_mvdr(a, &gamma, config.loading))
                .collect()
        }
        _ => Ok(Vec::new()),
    }
}

/// Per-bin inputs shared by every method.
struct BinInput<'a> {
    k: usize,
    /// `frames x mics`, frame-major.
    y: Vec<Complex64>,
    mics: usize,
    track: &'a SteeringTrack,
    gain: &'a dyn GainProvider,
}

impl BinInput<'_> {
    fn frame(&self, n: usize) -> &[Complex64] {
        &self.y[n * self.mics..(n + 1) * self.mics]
    }

    fn frames(&self) -> usize {
        self.y.len() / self.mics
    }

    fn steering(&self, n: usize) -> &[Complex64] {
        self.track.blocks[self.track.block_at(n)].1.bin(self.k)
    }

    fn gain(&self, n: usize) -> f64 {
        if self.gain.is_identity() {
            1.0
        } else {
            self.gain.gain(self.k, n)
        }
    }
}

fn run_fixed(input: &BinInput, weights: &[FixedWeights]) -> Vec<Complex64> {
    (0..input.frames())
        .map(|n| {
            let w = weights[input.track.block_at(n)].bin(input.k);
            crate::linalg::dot_h(w, input.frame(n))
        })
        .collect()
}

fn run_apa(input: &BinInput, order: usize, config: &EnhanceConfig) -> Result<Vec<Complex64>> {
    let params = &config.params;
    let mut state = ApaState::new(input.steering(0), order, params.plan.delay)?;
    let mut out = vec![Complex64::new(0.0, 0.0); input.frames()];
    let passes = if config.prior_pass { 2 } else { 1 };
    for pass in 0..passes {
        if pass > 0 {
            state.reset_history();
        }
        for (n, o) in out.iter_mut().enumerate() {
            *o = apa::process_bin_frame(&mut state, input.frame(n), input.steering(n), input.gain(n), params)?.x;
        }
    }
    Ok(out)
}

fn run_rc(input: &BinInput, order: usize, weights: &[FixedWeights], config: &EnhanceConfig) -> Result<Vec<Complex64>> {
    if order == 0 {
        return Ok(run_fixed(input, weights));
    }
    let params = &config.params;
    let mut state = RcState::new(weights[0].bin(input.k).to_vec(), order, params.plan.delay)?;
    let mut out = vec![Complex64::new(0.0, 0.0); input.frames()];
    let passes = if config.prior_pass { 2 } else { 1 };
    for pass in 0..passes {
        if pass > 0 {
            state.reset_history();
        }
        let mut block = usize::MAX;
        for (n, o) in out.iter_mut().enumerate() {
            let b = input.track.block_at(n);
            if b != block {
                state.set_w_sd(weights[b].bin(input.k));
                block = b;
            }
            *o = sdmvdr::process_bin_frame(&mut state, input.frame(n), input.gain(n), params)?.x;
        }
    }
    Ok(out)
}

/// Enhances a multichannel spectrogram into a single-channel one.
pub fn enhance_spectrogram(
    spec: &Spectrogram,
    geom: &ArrayGeometry,
    steering: &SteeringTrack,
    config: &EnhanceConfig,
    gain: &dyn GainProvider,
) -> Result<Spectrogram> {
    config.validate()?;
    geom.validate()?;
    let mics = spec.channels();
    if mics != geom.num_mics() {
        return Err(invalid(format!("spectrogram has {mics} channels, geometry has {} mics", geom.num_mics())));
    }
    for (_, a) in &steering.blocks {
        if a.mics() != mics || a.bins() != spec.bins() {
            return Err(invalid(format!(
                "steering is {} bins x {} mics, spectrogram {} bins x {mics}",
                a.bins(),
                a.mics(),
                spec.bins()
            )));
        }
    }
    psd::check_dims(gain, spec.bins(), spec.frames())?;

    let method = config.method;
    if method == Method::RefMic {
        let mut out = spec.channel(geom.reference_mic);
        out.signal_len = spec.signal_len;
        return Ok(out);
    }
    let stft_cfg = spec.config;
    let weights = design_weights(method, steering, geom, &stft_cfg, config)?;
    let plan = config.effective_plan();

    let tracks: Vec<Result<Vec<Complex64>>> = par::map_range(spec.bins(), config.threads, |k| {
        let input = BinInput { k, y: spec.bin_matrix(k), mics, track: steering, gain };
        let order = plan.band_order(k, &stft_cfg);
        match method {
            Method::RefMic => unreachable!(),
            Method::DelaySum | Method::SdMvdr => Ok(run_fixed(&input, &weights)),
            Method::MpdrApa | Method::ConvMpdrApa => run_apa(&input, order, config),
            Method::ConvSdMvdr => run_rc(&input, order, &weights, config),
        }
    });
    let tracks = tracks.into_iter().collect::<Result<Vec<_>>>()?;
    Spectrogram::from_bin_tracks(tracks, stft_cfg, spec.signal_len)
}

/// Source direction handling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Doa {
    /// Localize with SRP-PHAT.
    Auto,
    /// Fixed azimuth in radians (elevation 0).
    Azimuth(f64),
}

/// Result of [`enhance_audio`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceOutput {
    pub signal: Vec<f64>,
    /// Azimuth of the first steering block, radians.
    pub azimuth: f64,
    pub frames: usize,
    /// Stacked filter length per band (`Q`, or `M` for plain beamformers).
    pub q_per_band: Vec<usize>,
    /// Gain applied to the input before processing (undone on the output).
    pub input_gain: f64,
}

/// Target RMS of the reference mic after normalization (-20 dBFS).
pub const TARGET_RMS: f64 = 0.1;

/// Gain that brings the reference channel to [`TARGET_RMS`] (1 for silence).
pub fn normalization_gain(reference: &[f64]) -> f64 {
    if reference.is_empty() {
        return 1.0;
    }
    let rms = (reference.iter().map(|v| v * v).sum::<f64>() / reference.len() as f64).sqrt();
    if rms > 0.0 && rms.is_finite() {
        TARGET_RMS / rms
    } else {
        1.0
    }
}

/// Builds the steering track for `spec` according to `doa`.
pub fn steering_for(
    spec: &Spectrogram,
    geom: &ArrayGeometry,
    doa: Doa,
    config: &EnhanceConfig,
) -> Result<(SteeringTrack, f64)> {
    let cfg = spec.config;
    let c = config.speed_of_sound;
    let steer = |az: f64| plane_wave_steering(geom, az, config.grid.elevation, &cfg, c);
    match doa {
        Doa::Azimuth(az) => Ok((steer(az).into(), az)),
        Doa::Auto if geom.num_mics() < 2 => Ok((steer(0.0).into(), 0.0)),
        Doa::Auto => match config.doa_block_frames {
            None => {
                let az = srp_phat_localize(spec, geom, &config.grid, config.threads)?;
                Ok((steer(az).into(), az))
            }
            Some(block) => {
                let mut blocks = Vec::new();
                let mut first = 0.0;
                for start in (0..spec.frames()).step_by(block) {
                    let end = (start + block).min(spec.frames());
                    let az = srp_phat_localize(&frame_slice(spec, start, end), geom, &config.grid, config.threads)?;
                    if start == 0 {
                        first = az;
                    }
                    blocks.push((start, steer(az)));
                }
                Ok((SteeringTrack::new(blocks)?, first))
            }
        },
    }
}

fn frame_slice(spec: &Spectrogram, start: usize, end: usize) -> Spectrogram {
    let mut out = Spectrogram::zeros(spec.channels(), end - start, spec.config);
    for m in 0..spec.channels() {
        for k in 0..spec.bins() {
            out.track_mut(m, k).copy_from_slice(&spec.track(m, k)[start..end]);
        }
    }
    out
}

/// Full pipeline on time-domain audio (`channels x samples`).
pub fn enhance_audio(
    audio: &[Vec<f64>],
    geom: &ArrayGeometry,
    doa: Doa,
    stft_cfg: &StftConfig,
    config: &EnhanceConfig,
    gain: &dyn GainProvider,
) -> Result<EnhanceOutput> {
    if audio.len() != geom.num_mics() {
        return Err(invalid(format!("audio has {} channels, geometry has {} mics", audio.len(), geom.num_mics())));
    }
    let g = normalization_gain(&audio[geom.reference_mic]);
    let scaled: Vec<Vec<f64>> = audio.iter().map(|ch| ch.iter().map(|v| v * g).collect()).collect();
    let spec = stft(&scaled, stft_cfg)?;
    let (track, azimuth) = steering_for(&spec, geom, doa, config)?;
    let out = enhance_spectrogram(&spec, geom, &track, config, gain)?;
    let mut signal = istft(&out, stft_cfg)?.swap_remove(0);
    for v in &mut signal {
        *v /= g;
    }
    let plan = config.effective_plan();
    let mics = geom.num_mics();
    let q_per_band = plan
        .orders
        .iter()
        .map(|&l| match config.method {
            Method::MpdrApa | Method::ConvMpdrApa => crate::bench::filter_len(mics, l, plan.delay),
            Method::ConvSdMvdr if l > 0 => mics * (l - plan.delay + 1),
            _ => mics,
        })
        .collect();
    Ok(EnhanceOutput { signal, azimuth, frames: spec.frames(), q_per_band, input_gain: g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::circular_array;
    use crate::psd::IdentityGain;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("wpd".parse::<Method>().is_err());
    }

    #[test]
    fn steering_track_lookup() {
        let g = circular_array(2, 0.1).unwrap();
        let cfg = StftConfig::default();
        let a = plane_wave_steering(&g, 0.0, 0.0, &cfg, 343.0);
        let t = SteeringTrack::new(vec![(0, a.clone()), (10, a.clone()), (25, a.clone())]).unwrap();
        assert_eq!(t.block_at(0), 0);
        assert_eq!(t.block_at(9), 0);
        assert_eq!(t.block_at(10), 1);
        assert_eq!(t.block_at(100), 2);
        assert!(SteeringTrack::new(vec![(1, a.clone())]).is_err());
        assert!(SteeringTrack::new(vec![(0, a.clone()), (0, a)]).is_err());
    }

    #[test]
    fn normalization() {
        let x = vec![0.5; 100];
        assert!((normalization_gain(&x) - 0.2).abs() < 1e-15);
        assert_eq!(normalization_gain(&[0.0; 10]), 1.0);
    }

    #[test]
    fn ref_mic_passthrough() {
        let g = circular_array(3, 0.1).unwrap();
        let cfg = StftConfig::default();
        let audio: Vec<Vec<f64>> = (0..3).map(|m| (0..4000).map(|i| ((i * (m + 1)) as f64 * 0.01).sin()).collect()).collect();
        let out = enhance_audio(&audio, &g, Doa::Azimuth(0.0), &cfg, &EnhanceConfig::new(Method::RefMic), &IdentityGain).unwrap();
        for i in 512..3488 {
            assert!((out.signal[i] - audio[0][i]).abs() < 1e-9);
        }
    }
}
