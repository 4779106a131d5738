//! Array geometry, plane-wave steering, diffuse coherence and an SRP-PHAT
//! azimuth search.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::dsp::{Spectrogram, StftConfig};
use crate::error::{invalid, Error, Result};
use crate::par;

/// Default speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// Microphone positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub positions: Vec<[f64; 3]>,
    pub reference_mic: usize,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<[f64; 3]>, reference_mic: usize) -> Result<Self> {
        let g = Self { positions, reference_mic };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(invalid("array needs at least one microphone"));
        }
        if self.reference_mic >= self.positions.len() {
            return Err(invalid(format!(
                "reference mic {} out of range for {} mics",
                self.reference_mic,
                self.positions.len()
            )));
        }
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite microphone coordinate"));
        }
        Ok(())
    }

    pub fn num_mics(&self) -> usize {
        self.positions.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Parses the plain-text geometry format: one `x y z` line per mic,
    /// `#` starts a comment. The first mic is the reference.
    pub fn parse(text: &str) -> Result<Self> {
        let mut positions = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid(format!("geometry line {}: {e}", lineno + 1)))?;
            if vals.len() != 3 {
                return Err(invalid(format!(
                    "geometry line {}: expected 3 coordinates, got {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            positions.push([vals[0], vals[1], vals[2]]);
        }
        Self::new(positions, 0)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# x y z [m], first line is the reference mic\n");
        let order = std::iter::once(self.reference_mic).chain((0..self.num_mics()).filter(|&m| m != self.reference_mic));
        for m in order {
            let p = self.positions[m];
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// `m` mics equally spaced on a circle in the z = 0 plane, mic 0 at angle 0.
pub fn circular_array(m: usize, radius: f64) -> Result<ArrayGeometry> {
    if m == 0 {
        return Err(invalid("array needs at least one microphone"));
    }
    if !(radius > 0.0) {
        return Err(invalid(format!("radius must be positive, got {radius}")));
    }
    let positions = (0..m)
        .map(|i| {
            let phi = 2.0 * PI * i as f64 / m as f64;
            [radius * phi.cos(), radius * phi.sin(), 0.0]
        })
        .collect();
    ArrayGeometry::new(positions, 0)
}

/// Relative transfer function vector per bin, `bins x mics`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    mics: usize,
    data: Vec<Complex64>,
}

impl SteeringVector {
    /// Wraps per-bin vectors and normalizes each to the reference mic.
    pub fn from_bins(bins: Vec<Vec<Complex64>>, reference_mic: usize) -> Result<Self> {
        let mics = bins.first().map_or(0, Vec::len);
        if mics == 0 || reference_mic >= mics {
            return Err(invalid("steering vector needs a valid reference mic"));
        }
        let mut data = Vec::with_capacity(bins.len() * mics);
        for (k, b) in bins.into_iter().enumerate() {
            if b.len() != mics {
                return Err(invalid(format!("bin {k} has {} mics, expected {mics}", b.len())));
            }
            let r = b[reference_mic];
            if r.norm() == 0.0 {
                return Err(invalid(format!("reference element is zero at bin {k}")));
            }
            data.extend(b.iter().enumerate().map(|(m, v)| {
                if m == reference_mic {
                    Complex64::new(1.0, 0.0)
                } else {
                    v / r
                }
            }));
        }
        Ok(Self { mics, data })
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

/// Far-field delay of each mic relative to the array origin for a source in
/// direction (`azimuth`, `elevation`). Mics closer to the source get negative delays.
fn plane_wave_delays(geom: &ArrayGeometry, azimuth: f64, elevation: f64, c: f64) -> Vec<f64> {
    let u = [
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    ];
    geom.positions
        .iter()
        .map(|p| -(p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / c)
        .collect()
}

/// Plane-wave RTF: `a_m(k) = exp(-j 2 pi f_k (tau_m - tau_ref))`.
pub fn plane_wave_steering(
    geom: &ArrayGeometry,
    azimuth: f64,
    elevation: f64,
    config: &StftConfig,
    c: f64,
) -> SteeringVector {
    let tau = plane_wave_delays(geom, azimuth, elevation, c);
    let t_ref = tau[geom.reference_mic];
    let mics = geom.num_mics();
    let mut data = Vec::with_capacity(config.num_bins() * mics);
    for k in 0..config.num_bins() {
        let f = config.bin_freq(k);
        for (m, t) in tau.iter().enumerate() {
            data.push(if m == geom.reference_mic {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -2.0 * PI * f * (t - t_ref))
            });
        }
    }
    SteeringVector { mics, data }
}

/// Diffuse-field coherence `sinc(2 pi f d_ij / c)` per bin, real and symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMatrix {
    mics: usize,
    data: Vec<f64>,
}

impl CoherenceMatrix {
    pub fn mics(&self) -> usize {
        self.mics
    }

    pub fn bins(&self) -> usize {
        self.data.len() / (self.mics * self.mics)
    }

    /// Row-major `mics x mics` matrix of bin `k`.
    pub fn bin(&self, k: usize) -> &[f64] {
        let s = self.mics * self.mics;
        &self.data[k * s..(k + 1) * s]
    }

    /// Identity coherence (spatially white field), mostly for tests.
    pub fn identity(mics: usize, bins: usize) -> Self {
        let mut data = vec![0.0; bins * mics * mics];
        for k in 0..bins {
            for i in 0..mics {
                data[k * mics * mics + i * mics + i] = 1.0;
            }
        }
        Self { mics, data }
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

pub fn diffuse_coherence(geom: &ArrayGeometry, config: &StftConfig, c: f64) -> CoherenceMatrix {
    let mics = geom.num_mics();
    let mut data = Vec::with_capacity(config.num_bins() * mics * mics);
    for k in 0..config.num_bins() {
        let f = config.bin_freq(k);
        for i in 0..mics {
            for j in 0..mics {
                data.push(if i == j {
                    1.0
                } else {
                    sinc(2.0 * PI * f * geom.distance(i, j) / c)
                });
            }
        }
    }
    CoherenceMatrix { mics, data }
}

/// SRP-PHAT search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrpGrid {
    /// Azimuth step in radians; the grid spans `[0, 2 pi)`.
    pub step: f64,
    pub elevation: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub c: f64,
}

impl Default for SrpGrid {
    fn default() -> Self {
        Self {
            step: 5f64.to_radians(),
            elevation: 0.0,
            f_lo: 300.0,
            f_hi: 4000.0,
            c: SPEED_OF_SOUND,
        }
    }
}

impl SrpGrid {
    pub fn azimuths(&self) -> Vec<f64> {
        let n = (2.0 * PI / self.step).round().max(1.0) as usize;
        (0..n).map(|i| i as f64 * self.step).collect()
    }
}

/// Steered response power with phase transform, one value per grid azimuth.
pub fn srp_phat_map(spec: &Spectrogram, geom: &ArrayGeometry, grid: &SrpGrid, threads: usize) -> Result<Vec<f64>> {
    let m = spec.channels();
    if m < 2 || geom.num_mics() < 2 {
        return Err(Error::Unsupported("SRP-PHAT needs at least two microphones".into()));
    }
    if m != geom.num_mics() {
        return Err(invalid(format!("spectrogram has {m} channels, geometry {} mics", geom.num_mics())));
    }
    if spec.frames() == 0 {
        return Err(invalid("empty spectrogram"));
    }
    let cfg = spec.config;
    let bins: Vec<usize> = (0..spec.bins())
        .filter(|&k| {
            let f = cfg.bin_freq(k);
            f >= grid.f_lo && f <= grid.f_hi
        })
        .collect();

    // PHAT-whitened observations, bin-major
    let whitened: Vec<Vec<Complex64>> = bins
        .iter()
        .map(|&k| {
            spec.bin_matrix(k)
                .into_iter()
                .map(|v| {
                    let n = v.norm();
                    if n > 0.0 {
                        v / n
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect();

    let azimuths = grid.azimuths();
    Ok(par::map_range(azimuths.len(), threads, |g| {
        let a = plane_wave_steering(geom, azimuths[g], grid.elevation, &cfg, grid.c);
        let mut power = 0.0;
        for (bi, &k) in bins.iter().enumerate() {
            let steer = a.bin(k);
            for frame in whitened[bi].chunks_exact(m) {
                let s: Complex64 = steer.iter().zip(frame).map(|(s, y)| s.conj() * y).sum();
                power += s.norm_sqr();
            }
        }
        power
    }))
}

/// Azimuth (radians) maximizing the SRP-PHAT map. Ties go to the lowest grid index.
pub fn srp_phat_localize(spec: &Spectrogram, geom: &ArrayGeometry, grid: &SrpGrid, threads: usize) -> Result<f64> {
    let map = srp_phat_map(spec, geom, grid, threads)?;
    let mut best = 0;
    for (i, p) in map.iter().enumerate() {
        if *p > map[best] {
            best = i;
        }
    }
    Ok(grid.azimuths()[best])
}
