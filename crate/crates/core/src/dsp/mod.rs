//! Signal-processing front end: framing, STFT magnitudes, log-mel
//! spectrograms, frame energy, autocorrelation pitch, and phoneme-level
//! prosody targets.
//!
//! Everything here is a pure function of its inputs and runs in `f64`.

mod pitch;
mod resample;
pub mod wav;

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pitch::extract_pitch;
pub use resample::resample;

/// Filterbank outputs are clamped to this before the log.
pub const MEL_FLOOR: f64 = 1e-5;

/// Lower bound on the standard deviation used by [`fit_normalize`].
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    /// Seconds.
    pub frame_length: f64,
    /// Seconds.
    pub frame_shift: f64,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub pitch_fmin: f64,
    pub pitch_fmax: f64,
    pub voicing_threshold: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            sample_rate: 22050,
            frame_length: 0.050,
            frame_shift: 0.0125,
            fft_size: 2048,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            pitch_fmin: 60.0,
            pitch_fmax: 500.0,
            voicing_threshold: 0.45,
        }
    }
}

impl AudioConfig {
    pub fn frame_samples(&self) -> usize {
        (self.frame_length * self.sample_rate as f64).floor() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.frame_shift * self.sample_rate as f64).floor() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples, or `None`
    /// when the signal is shorter than one frame.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        frame_count(len, self.frame_samples(), self.hop_samples())
    }

    /// Sample count of a signal that yields exactly `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        self.frame_samples() + frames.saturating_sub(1) * self.hop_samples()
    }

    pub fn validate(&self) -> Result<()> {
        let fs = self.frame_samples();
        let hop = self.hop_samples();
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::ConfigError("sample_rate must be positive".into()));
        }
        if hop == 0 || !(self.frame_shift < self.frame_length) {
            return Err(Error::ConfigError(
                "frame_shift must be positive and shorter than frame_length".into(),
            ));
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < fs {
            return Err(Error::ConfigError(format!(
                "fft_size {} must be a power of two >= frame samples {fs}",
                self.fft_size
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::ConfigError("n_mels must be >= 1".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::ConfigError(format!(
                "mel band [{}, {}] must lie inside [0, {nyquist}]",
                self.fmin, self.fmax
            )));
        }
        if !(self.pitch_fmin > 0.0 && self.pitch_fmin < self.pitch_fmax && self.pitch_fmax < nyquist) {
            return Err(Error::ConfigError(format!(
                "pitch band [{}, {}] must satisfy 0 < fmin < fmax < {nyquist}",
                self.pitch_fmin, self.pitch_fmax
            )));
        }
        if !(self.voicing_threshold > 0.0 && self.voicing_threshold < 1.0) {
            return Err(Error::ConfigError("voicing_threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

pub fn frame_count(len: usize, frame_samples: usize, hop_samples: usize) -> Option<usize> {
    if len < frame_samples || frame_samples == 0 || hop_samples == 0 {
        return None;
    }
    Some(1 + (len - frame_samples) / hop_samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Resamples to `rate` if needed.
    pub fn to_rate(&self, rate: u32) -> Result<Waveform> {
        if rate == self.sample_rate {
            return Ok(self.clone());
        }
        Waveform::new(resample(&self.samples, self.sample_rate, rate), rate)
    }
}

/// Non-negative magnitude frames, `frames × bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrames {
    pub n_frames: usize,
    pub n_bins: usize,
    pub magnitudes: Vec<f64>,
}

impl SpectralFrames {
    pub fn frame(&self, i: usize) -> &[f64] {
        &self.magnitudes[i * self.n_bins..(i + 1) * self.n_bins]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTrack {
    /// Hz per frame, 0 where unvoiced.
    pub pitch_hz: Vec<f64>,
    pub energy: Vec<f64>,
}

impl ProsodyTrack {
    pub fn new(pitch_hz: Vec<f64>, energy: Vec<f64>) -> Result<Self> {
        if pitch_hz.len() != energy.len() {
            return Err(Error::AlignmentMismatch(format!(
                "pitch has {} frames, energy has {}",
                pitch_hz.len(),
                energy.len()
            )));
        }
        Ok(ProsodyTrack { pitch_hz, energy })
    }

    pub fn len(&self) -> usize {
        self.pitch_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch_hz.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn check_length(w: &Waveform, cfg: &AudioConfig) -> Result<usize> {
    let need = cfg.frame_samples();
    cfg.frame_count(w.len())
        .ok_or(Error::InputTooShort { got: w.len(), need })
}

/// Reusable STFT plan for one configuration.
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    fft_size: usize,
    hop: usize,
}

impl Stft {
    pub fn new(cfg: &AudioConfig) -> Self {
        let mut planner = FftPlanner::new();
        Stft {
            fft: planner.plan_fft_forward(cfg.fft_size),
            window: periodic_hann(cfg.frame_samples()),
            fft_size: cfg.fft_size,
            hop: cfg.hop_samples(),
        }
    }

    pub fn process(&self, samples: &[f64]) -> Result<SpectralFrames> {
        let fs = self.window.len();
        let n_frames = frame_count(samples.len(), fs, self.hop).ok_or(Error::InputTooShort {
            got: samples.len(),
            need: fs,
        })?;
        let n_bins = self.fft_size / 2 + 1;
        let mut magnitudes = Vec::with_capacity(n_frames * n_bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..n_frames {
            let start = f * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < fs {
                    Complex::new(samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            magnitudes.extend(buf[..n_bins].iter().map(|c| c.norm()));
        }
        Ok(SpectralFrames {
            n_frames,
            n_bins,
            magnitudes,
        })
    }
}

/// Hann-windowed STFT magnitudes.
pub fn stft(w: &Waveform, cfg: &AudioConfig) -> Result<SpectralFrames> {
    check_length(w, cfg)?;
    Stft::new(cfg).process(w.samples())
}

/// Per-frame L2 norm of the magnitude spectrum.
pub fn frame_energy(s: &SpectralFrames) -> Vec<f64> {
    (0..s.n_frames)
        .map(|i| s.frame(i).iter().map(|m| m * m).sum::<f64>().sqrt())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters (unit peak) on the HTK mel scale, `n_mels × n_bins`.
pub fn mel_filterbank(cfg: &AudioConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_bins();
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Log-mel spectrogram, `frames × n_mels` rows.
pub fn mel_spectrogram(w: &Waveform, cfg: &AudioConfig) -> Result<Vec<Vec<f64>>> {
    let spec = stft(w, cfg)?;
    Ok(mel_from_spectrum(&spec, &mel_filterbank(cfg)))
}

pub fn mel_from_spectrum(spec: &SpectralFrames, bank: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..spec.n_frames)
        .map(|i| {
            let frame = spec.frame(i);
            bank.iter()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(frame).map(|(a, b)| a * b).sum();
                    e.max(MEL_FLOOR).ln()
                })
                .collect()
        })
        .collect()
}

/// Everything the acoustic model needs from one waveform.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub mel: Vec<Vec<f64>>,
    pub track: ProsodyTrack,
}

/// Runs STFT once and derives mel, energy and pitch from it.
pub fn analyze(w: &Waveform, cfg: &AudioConfig) -> Result<Analysis> {
    let spec = stft(w, cfg)?;
    let mel = mel_from_spectrum(&spec, &mel_filterbank(cfg));
    let energy = frame_energy(&spec);
    let pitch = extract_pitch(w, cfg)?;
    Ok(Analysis {
        mel,
        track: ProsodyTrack::new(pitch, energy)?,
    })
}

pub fn prosody_track(w: &Waveform, cfg: &AudioConfig) -> Result<ProsodyTrack> {
    let spec = stft(w, cfg)?;
    ProsodyTrack::new(extract_pitch(w, cfg)?, frame_energy(&spec))
}

fn check_durations(len: usize, durations: &[usize]) -> Result<()> {
    if let Some(i) = durations.iter().position(|&d| d == 0) {
        return Err(Error::AlignmentMismatch(format!("phoneme {i} has zero duration")));
    }
    let total: usize = durations.iter().sum();
    if total != len {
        return Err(Error::AlignmentMismatch(format!(
            "durations sum to {total} frames, sequence has {len}"
        )));
    }
    Ok(())
}

/// Mean of each phoneme's frame span.
pub fn phoneme_average(frame_values: &[f64], durations: &[usize]) -> Result<Vec<f64>> {
    check_durations(frame_values.len(), durations)?;
    let mut out = Vec::with_capacity(durations.len());
    let mut start = 0;
    for &d in durations {
        let span = &frame_values[start..start + d];
        out.push(span.iter().sum::<f64>() / d as f64);
        start += d;
    }
    Ok(out)
}

/// Mean over the voiced (non-zero) frames of each span; 0 if none are voiced.
pub fn phoneme_average_voiced(pitch_hz: &[f64], durations: &[usize]) -> Result<Vec<f64>> {
    check_durations(pitch_hz.len(), durations)?;
    let mut out = Vec::with_capacity(durations.len());
    let mut start = 0;
    for &d in durations {
        let (sum, n) = pitch_hz[start..start + d]
            .iter()
            .filter(|&&p| p > 0.0)
            .fold((0.0, 0usize), |(s, n), &p| (s + p, n + 1));
        out.push(if n == 0 { 0.0 } else { sum / n as f64 });
        start += d;
    }
    Ok(out)
}

/// Population statistics of `values`.
pub fn fit_stats(values: &[f64]) -> Result<NormStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("normalization input"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(NormStats {
        mean,
        std: var.sqrt().max(STD_FLOOR),
    })
}

pub fn fit_normalize(values: &[f64]) -> Result<(NormStats, Vec<f64>)> {
    let stats = fit_stats(values)?;
    let out = values.iter().map(|&v| stats.normalize(v)).collect();
    Ok((stats, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, sr: u32, amp: f64) -> Waveform {
        let n = (secs * sr as f64) as usize;
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        Waveform::new(s, sr).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = AudioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.frame_samples(), 1102);
        assert_eq!(cfg.hop_samples(), 275);
    }

    #[test]
    fn frame_count_for_one_second() {
        let cfg = AudioConfig::default();
        let w = Waveform::new(vec![0.0; 22050], 22050).unwrap();
        let s = stft(&w, &cfg).unwrap();
        assert_eq!(s.n_frames, 77);
        assert_eq!(s.n_bins, 1025);
    }

    #[test]
    fn zero_waveform_has_zero_spectrum() {
        let cfg = AudioConfig::default();
        let w = Waveform::new(vec![0.0; 4000], 22050).unwrap();
        let s = stft(&w, &cfg).unwrap();
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        let mel = mel_spectrogram(&w, &cfg).unwrap();
        assert_eq!(mel.len(), s.n_frames);
        assert!(mel.iter().all(|r| r.len() == 80));
        assert!(mel.iter().flatten().all(|&v| v == MEL_FLOOR.ln()));
    }

    #[test]
    fn short_waveform_rejected() {
        let cfg = AudioConfig::default();
        let w = Waveform::new(vec![0.1; 1000], 22050).unwrap();
        assert!(matches!(stft(&w, &cfg), Err(Error::InputTooShort { .. })));
        assert!(matches!(mel_spectrogram(&w, &cfg), Err(Error::InputTooShort { .. })));
        assert!(matches!(extract_pitch(&w, &cfg), Err(Error::InputTooShort { .. })));
    }

    #[test]
    fn bin_centered_sine_peaks_at_its_bin() {
        let cfg = AudioConfig {
            fft_size: 2048,
            ..AudioConfig::default()
        };
        let fs = cfg.frame_samples();
        let bin = 40usize;
        let freq = bin as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
        let w = sine(freq, 0.2, cfg.sample_rate, 0.5);
        let s = stft(&w, &cfg).unwrap();

        // direct DFT of the first windowed frame
        let win = periodic_hann(fs);
        let direct: Vec<f64> = (0..cfg.n_bins())
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..fs {
                    let x = w.samples()[n] * win[n];
                    let ph = -2.0 * std::f64::consts::PI * (k * n) as f64 / cfg.fft_size as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(s.frame(0)), bin);
        assert_eq!(argmax(&direct), bin);
        for (a, b) in s.frame(0).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b));
        }
    }

    #[test]
    fn energy_identities() {
        let s = SpectralFrames {
            n_frames: 2,
            n_bins: 2,
            magnitudes: vec![3.0, 4.0, 0.0, 0.0],
        };
        assert_eq!(frame_energy(&s), vec![5.0, 0.0]);
    }

    #[test]
    fn filterbank_matches_independent_construction() {
        let cfg = AudioConfig::default();
        let bank = mel_filterbank(&cfg);
        assert_eq!(bank.len(), 80);
        // recompute from the mel formula with explicit slopes
        let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
        let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
        let (lo, hi) = (mel(cfg.fmin), mel(cfg.fmax));
        let pts: Vec<f64> = (0..82).map(|i| inv(lo + (hi - lo) * i as f64 / 81.0)).collect();
        for (m, row) in bank.iter().enumerate() {
            assert!(row.iter().sum::<f64>() > 0.0, "filter {m} is empty");
            for (k, &w) in row.iter().enumerate() {
                let f = k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
                let expect = if f <= pts[m] || f >= pts[m + 2] {
                    0.0
                } else if f <= pts[m + 1] {
                    (f - pts[m]) / (pts[m + 1] - pts[m])
                } else {
                    (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
                };
                assert!((w - expect).abs() < 1e-9, "filter {m} bin {k}");
            }
        }
        for m in 0..79 {
            let overlap = bank[m].iter().zip(&bank[m + 1]).any(|(a, b)| *a > 0.0 && *b > 0.0);
            assert!(overlap, "filters {m} and {} do not overlap", m + 1);
        }
    }

    #[test]
    fn phoneme_average_examples() {
        assert_eq!(phoneme_average(&[1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap(), vec![1.5, 3.5]);
        assert_eq!(phoneme_average(&[5.0; 3], &[3]).unwrap(), vec![5.0]);
        assert!(matches!(
            phoneme_average(&[0.0; 10], &[4, 4]),
            Err(Error::AlignmentMismatch(_))
        ));
        assert!(matches!(
            phoneme_average(&[0.0; 4], &[4, 0]),
            Err(Error::AlignmentMismatch(_))
        ));
    }

    #[test]
    fn voiced_average_skips_unvoiced_frames() {
        let p = [0.0, 100.0, 200.0, 0.0, 0.0];
        assert_eq!(phoneme_average_voiced(&p, &[3, 2]).unwrap(), vec![150.0, 0.0]);
    }

    #[test]
    fn normalize_examples() {
        let (stats, z) = fit_normalize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(stats.mean, 2.0);
        assert!((stats.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        for (a, b) in z.iter().zip([-1.2247, 0.0, 1.2247]) {
            assert!((a - b).abs() < 1e-4);
        }
        let (_, z) = fit_normalize(&[7.0; 3]).unwrap();
        assert_eq!(z, vec![0.0; 3]);
        assert!(fit_normalize(&[]).is_err());
    }
}
