//! Parsers for the compact command-line value formats.

use anyhow::{anyhow, bail, Context, Result};
use convbf::array::{circular_array, ArrayGeometry};
use convbf::dsp::BandPlan;
use convbf::pipeline::Doa;

/// `PATH` or `circular:M:R`.
pub fn geometry(text: &str) -> Result<ArrayGeometry> {
    if let Some(rest) = text.strip_prefix("circular:") {
        let (m, r) = rest.split_once(':').ok_or_else(|| anyhow!("expected circular:M:R, got '{text}'"))?;
        let m: usize = m.parse().with_context(|| format!("mic count in '{text}'"))?;
        let r: f64 = r.parse().with_context(|| format!("radius in '{text}'"))?;
        return Ok(circular_array(m, r)?);
    }
    ArrayGeometry::read(text).with_context(|| format!("reading geometry file {text}"))
}

/// `auto` or an azimuth in degrees.
pub fn doa(text: &str) -> Result<Doa> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(Doa::Auto);
    }
    let deg: f64 = text.parse().with_context(|| format!("DOA must be 'auto' or degrees, got '{text}'"))?;
    if !deg.is_finite() {
        bail!("DOA must be finite, got '{text}'");
    }
    Ok(Doa::Azimuth(deg.to_radians()))
}

/// `L1,L2,L3@F1,F2`; a single band is just `L`.
pub fn bands(text: &str, delay: usize) -> Result<BandPlan> {
    let (orders, freqs) = match text.split_once('@') {
        Some((o, f)) => (o, Some(f)),
        None => (text, None),
    };
    let orders: Vec<usize> = orders
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("band order '{s}' in '{text}'")))
        .collect::<Result<_>>()?;
    let freqs: Vec<f64> = match freqs {
        Some(f) if !f.trim().is_empty() => f
            .split(',')
            .map(|s| s.trim().parse::<f64>().with_context(|| format!("transition frequency '{s}' in '{text}'")))
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    Ok(BandPlan::new(freqs, orders, delay)?)
}

/// `true/false`, `1/0`, `yes/no`, `on/off`.
pub fn boolean(text: &str) -> Result<bool> {
    match text.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("expected a boolean, got '{text}'"),
    }
}

/// Comma-separated list of unsigned integers.
pub fn usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("'{s}' in '{text}'")))
        .collect()
}
