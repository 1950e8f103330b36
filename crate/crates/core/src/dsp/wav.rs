//! Mono WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a single-channel 16-bit PCM or 32-bit float WAV.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::MissingAsset(path.to_path_buf()));
    }
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::InvalidInput(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported sample format {fmt:?}/{bits}",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Sample count and rate without decoding the payload.
pub fn probe_wav(path: &Path) -> Result<(usize, u32)> {
    if !path.exists() {
        return Err(Error::MissingAsset(path.to_path_buf()));
    }
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    Ok((reader.duration() as usize, spec.sample_rate))
}

/// Writes 32-bit float mono. Samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample(s.clamp(-1.0, 1.0) as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM mono.
pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
