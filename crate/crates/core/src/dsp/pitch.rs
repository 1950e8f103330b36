use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioConfig, Waveform};
use crate::error::{Error, Result};

/// Peaks within this fraction of the global maximum count as candidates;
/// the shortest such lag wins, which avoids locking onto subharmonics.
const OCTAVE_TOLERANCE: f64 = 0.9;

/// Per-frame pitch by normalized autocorrelation with parabolic peak
/// interpolation. Frames whose best normalized correlation falls below
/// `cfg.voicing_threshold` report 0.
pub fn extract_pitch(w: &Waveform, cfg: &AudioConfig) -> Result<Vec<f64>> {
    let fs = cfg.frame_samples();
    let hop = cfg.hop_samples();
    let n_frames = cfg
        .frame_count(w.len())
        .ok_or(Error::InputTooShort { got: w.len(), need: fs })?;

    let sr = w.sample_rate() as f64;
    let min_lag = ((sr / cfg.pitch_fmax).floor() as usize).max(1);
    let max_lag = ((sr / cfg.pitch_fmin).ceil() as usize).min(fs - 2);
    if min_lag + 2 > max_lag {
        return Err(Error::ConfigError(
            "pitch search band is empty for this frame length".into(),
        ));
    }

    let n_fft = (2 * fs).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut frame = vec![0.0; fs];
    let mut prefix = vec![0.0; fs + 1];
    let mut nacf = vec![0.0; max_lag + 2];

    let mut out = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let src = &w.samples()[f * hop..f * hop + fs];
        let mean = src.iter().sum::<f64>() / fs as f64;
        for (d, s) in frame.iter_mut().zip(src) {
            *d = s - mean;
        }
        for i in 0..fs {
            prefix[i + 1] = prefix[i] + frame[i] * frame[i];
        }
        let total = prefix[fs];
        if total <= 1e-12 * fs as f64 {
            out.push(0.0);
            continue;
        }

        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(if i < fs { frame[i] } else { 0.0 }, 0.0);
        }
        fwd.process(&mut buf);
        for c in buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        inv.process(&mut buf);
        let scale = 1.0 / n_fft as f64;

        for lag in (min_lag - 1)..=(max_lag + 1) {
            let e_head = prefix[fs - lag];
            let e_tail = total - prefix[lag];
            let denom = (e_head * e_tail).sqrt();
            nacf[lag] = if denom > 0.0 { buf[lag].re * scale / denom } else { 0.0 };
        }

        let best = (min_lag..=max_lag).map(|l| nacf[l]).fold(f64::NEG_INFINITY, f64::max);
        if best < cfg.voicing_threshold {
            out.push(0.0);
            continue;
        }
        let peak = (min_lag..=max_lag)
            .find(|&l| nacf[l] >= OCTAVE_TOLERANCE * best && nacf[l] >= nacf[l - 1] && nacf[l] >= nacf[l + 1])
            .unwrap_or(min_lag);

        let (a, b, c) = (nacf[peak - 1], nacf[peak], nacf[peak + 1]);
        let curvature = a - 2.0 * b + c;
        let offset = if curvature < 0.0 {
            (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let hz = sr / (peak as f64 + offset);
        out.push(hz.clamp(cfg.pitch_fmin, cfg.pitch_fmax));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn silence_is_unvoiced() {
        let cfg = AudioConfig::default();
        let w = Waveform::new(vec![0.0; 22050], 22050).unwrap();
        let p = extract_pitch(&w, &cfg).unwrap();
        assert_eq!(p.len(), 77);
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_220_tracked_within_3hz() {
        let cfg = AudioConfig::default();
        let sr = cfg.sample_rate as f64;
        let s: Vec<f64> = (0..22050)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / sr).sin())
            .collect();
        let p = extract_pitch(&Waveform::new(s, 22050).unwrap(), &cfg).unwrap();
        let voiced: Vec<f64> = p.iter().copied().filter(|&v| v > 0.0).collect();
        assert_eq!(voiced.len(), p.len());
        for v in voiced {
            assert!((v - 220.0).abs() <= 3.0, "{v}");
        }
    }

    #[test]
    fn low_level_noise_is_mostly_unvoiced() {
        let cfg = AudioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..22050).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let p = extract_pitch(&Waveform::new(s, 22050).unwrap(), &cfg).unwrap();
        let unvoiced = p.iter().filter(|&&v| v == 0.0).count();
        assert!(unvoiced as f64 >= 0.9 * p.len() as f64, "{unvoiced}/{}", p.len());
    }
}
