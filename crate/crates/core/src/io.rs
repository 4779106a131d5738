//! RIFF/WAVE reading and writing (PCM16 and IEEE float32).

use std::path::Path;

use crate::error::{invalid, Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Multichannel audio, `channels x samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if let Some(first) = samples.first() {
            if samples.iter().any(|c| c.len() != first.len()) {
                return Err(invalid("channels differ in length"));
            }
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

fn malformed(offset: usize, message: impl Into<String>) -> Error {
    Error::Malformed { offset: offset as u64, message: message.into() }
}

fn u16_at(b: &[u8], o: usize) -> Result<u16> {
    b.get(o..o + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| malformed(o, "unexpected end of file"))
}

fn u32_at(b: &[u8], o: usize) -> Result<u32> {
    b.get(o..o + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| malformed(o, "unexpected end of file"))
}

struct Fmt {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
}

fn parse_fmt(b: &[u8], o: usize, size: usize) -> Result<Fmt> {
    if size < 16 {
        return Err(malformed(o, format!("fmt chunk too short ({size} bytes)")));
    }
    let mut tag = u16_at(b, o)?;
    let channels = u16_at(b, o + 2)?;
    let sample_rate = u32_at(b, o + 4)?;
    let bits = u16_at(b, o + 14)?;
    if tag == FORMAT_EXTENSIBLE {
        if size < 40 {
            return Err(malformed(o, "extensible fmt chunk too short"));
        }
        // first two bytes of the subformat GUID carry the format code
        tag = u16_at(b, o + 24)?;
    }
    let format = match (tag, bits) {
        (FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (FORMAT_FLOAT, 32) => SampleFormat::Float32,
        (t, bits) => {
            return Err(Error::Unsupported(format!("WAV format tag {t} with {bits} bits per sample")));
        }
    };
    if channels == 0 {
        return Err(malformed(o + 2, "zero channels"));
    }
    Ok(Fmt { format, channels, sample_rate })
}

/// Parses a WAV file held in memory.
pub fn parse_wav(b: &[u8]) -> Result<AudioBuffer> {
    if b.len() < 12 || &b[0..4] != b"RIFF" {
        return Err(malformed(0, "missing RIFF header"));
    }
    if &b[8..12] != b"WAVE" {
        return Err(malformed(8, "missing WAVE id"));
    }
    let mut o = 12;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<(usize, usize)> = None;
    while o + 8 <= b.len() {
        let id = &b[o..o + 4];
        let size = u32_at(b, o + 4)? as usize;
        let body = o + 8;
        match id {
            b"fmt " => fmt = Some(parse_fmt(b, body, size)?),
            b"data" => {
                // tolerate a truncated final data chunk, keep whole samples only
                let avail = b.len().saturating_sub(body).min(size);
                data = Some((body, avail));
            }
            _ => {}
        }
        o = body.saturating_add(size).saturating_add(size & 1);
    }
    let fmt = fmt.ok_or_else(|| malformed(12, "no fmt chunk"))?;
    let (start, len) = data.ok_or_else(|| malformed(12, "no data chunk"))?;
    let ch = fmt.channels as usize;
    let width = match fmt.format {
        SampleFormat::Pcm16 => 2,
        SampleFormat::Float32 => 4,
    };
    let frames = len / (width * ch);
    let mut samples = vec![Vec::with_capacity(frames); ch];
    for f in 0..frames {
        for (c, chan) in samples.iter_mut().enumerate() {
            let p = start + (f * ch + c) * width;
            let v = match fmt.format {
                SampleFormat::Pcm16 => i16::from_le_bytes([b[p], b[p + 1]]) as f64 / 32768.0,
                SampleFormat::Float32 => f32::from_le_bytes([b[p], b[p + 1], b[p + 2], b[p + 3]]) as f64,
            };
            chan.push(v);
        }
    }
    Ok(AudioBuffer { samples, sample_rate: fmt.sample_rate })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    parse_wav(&std::fs::read(path)?)
}

/// Serializes to a canonical 44-byte-header WAV.
pub fn encode_wav(buf: &AudioBuffer, format: SampleFormat) -> Result<Vec<u8>> {
    let ch = buf.channels();
    if ch == 0 || ch > u16::MAX as usize {
        return Err(invalid(format!("cannot write {ch} channels")));
    }
    let (tag, width) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 2usize),
        SampleFormat::Float32 => (FORMAT_FLOAT, 4usize),
    };
    let data_len = buf.len() * ch * width;
    if data_len > (u32::MAX as usize - 36) {
        return Err(invalid("audio too long for a RIFF file"));
    }
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(ch as u16).to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * (ch * width) as u32).to_le_bytes());
    out.extend_from_slice(&((ch * width) as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..buf.len() {
        for chan in &buf.samples {
            let v = chan[i];
            match format {
                SampleFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                SampleFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer, format: SampleFormat) -> Result<()> {
    std::fs::write(path, encode_wav(buf, format)?)?;
    Ok(())
}

/// Fails unless `buf` is at `expected` Hz. Never resamples.
pub fn resample_check(buf: &AudioBuffer, expected: u32) -> Result<()> {
    if buf.sample_rate != expected || buf.sample_rate == 0 {
        return Err(invalid(format!(
            "sample rate is {} Hz but {} Hz is required (no resampling is performed)",
            buf.sample_rate, expected
        )));
    }
    Ok(())
}
