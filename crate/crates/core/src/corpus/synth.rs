//! Harmonic surrogate corpus with controlled accent perturbations.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CorpusManifest, Domain, UtteranceRecord, PHONEMES};
use crate::dsp::wav::write_wav;
use crate::dsp::{AudioConfig, Waveform};
use crate::error::{Error, Result};

const UNVOICED: [&str; 9] = ["CH", "F", "HH", "K", "P", "S", "SH", "T", "TH"];
const FORMANT_BANDWIDTH: f64 = 120.0;
const MAX_HARMONIC_HZ: f64 = 5000.0;

/// Perturbation applied at magnitude 1; an accent with magnitude `m`
/// receives `m` times each component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccentPerturbation {
    /// Added to every phoneme pitch target.
    pub pitch_shift_hz: f64,
    /// Expansion of pitch about the utterance mean.
    pub contour_gain: f64,
    /// Std of random per-phoneme pitch excursions.
    pub excursion_hz: f64,
    /// Relative amplitude increase.
    pub energy_gain: f64,
    /// Relative duration stretch.
    pub duration_stretch: f64,
}

impl Default for AccentPerturbation {
    fn default() -> Self {
        AccentPerturbation {
            pitch_shift_hz: 30.0,
            contour_gain: 0.5,
            excursion_hz: 12.0,
            energy_gain: 0.6,
            duration_stretch: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_speakers: u32,
    pub n_accents: u32,
    pub utterances_per_speaker: usize,
    /// Perturbation magnitude per accent.
    pub magnitudes: Vec<f64>,
    pub perturbation: AccentPerturbation,
    /// Relative per-utterance spread of the magnitude, uniform in ±jitter.
    pub magnitude_jitter: f64,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_speakers: 3,
            n_accents: 3,
            utterances_per_speaker: 20,
            magnitudes: vec![0.2, 0.5, 1.0],
            perturbation: AccentPerturbation::default(),
            magnitude_jitter: 0.1,
            min_phonemes: 6,
            max_phonemes: 10,
            min_frames: 3,
            max_frames: 7,
            sample_rate: 22050,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::ConfigError(m));
        if self.n_speakers == 0 || self.n_accents == 0 || self.utterances_per_speaker == 0 {
            return err("speaker, accent and utterance counts must be positive".into());
        }
        if self.magnitudes.len() != self.n_accents as usize {
            return err(format!(
                "{} magnitudes for {} accents",
                self.magnitudes.len(),
                self.n_accents
            ));
        }
        if self.magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return err("magnitudes must be finite and non-negative".into());
        }
        let p = &self.perturbation;
        let comps = [
            p.pitch_shift_hz,
            p.contour_gain,
            p.excursion_hz,
            p.energy_gain,
            p.duration_stretch,
        ];
        if comps.iter().any(|v| !v.is_finite()) {
            return err("perturbation components must be finite".into());
        }
        if !(0.0..1.0).contains(&self.magnitude_jitter) {
            return err("magnitude_jitter must lie in [0, 1)".into());
        }
        if self.min_phonemes == 0 || self.min_phonemes > self.max_phonemes {
            return err("need 1 <= min_phonemes <= max_phonemes".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return err("need 1 <= min_frames <= max_frames".into());
        }
        if self.sample_rate < 8000 {
            return err("sample_rate must be at least 8000".into());
        }
        Ok(())
    }

    pub fn accent_of(&self, speaker: u32) -> u32 {
        speaker % self.n_accents
    }

    fn audio(&self) -> AudioConfig {
        AudioConfig {
            sample_rate: self.sample_rate,
            ..AudioConfig::default()
        }
    }
}

/// Generated corpus held in memory; wav paths are relative to the root.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    pub waveforms: BTreeMap<PathBuf, Waveform>,
    /// Effective perturbation magnitude per utterance id.
    pub magnitudes: BTreeMap<String, f64>,
}

impl SyntheticCorpus {
    /// Writes wavs, manifest and spec under `dir`, and points the manifest
    /// root there.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("wav"))?;
        for (rel, w) in &self.waveforms {
            write_wav(&dir.join(rel), w)?;
        }
        self.manifest.root = dir.to_path_buf();
        self.manifest.write(dir)
    }
}

fn formants(phoneme: usize) -> (f64, f64) {
    (
        300.0 + 60.0 * (phoneme % 9) as f64,
        900.0 + 130.0 * (phoneme % 13) as f64,
    )
}

fn is_voiced(phoneme: usize) -> bool {
    !UNVOICED.contains(&PHONEMES[phoneme])
}

/// Per-phoneme prosody targets of one rendition.
struct Rendition {
    durations: Vec<usize>,
    pitch: Vec<f64>,
    amplitude: Vec<f64>,
}

/// Linear interpolation of frame-indexed values at fractional position.
fn interp(values: &[f64], pos: f64) -> f64 {
    let pos = pos.clamp(0.0, (values.len() - 1) as f64);
    let i = pos.floor() as usize;
    let j = (i + 1).min(values.len() - 1);
    let t = pos - i as f64;
    values[i] * (1.0 - t) + values[j] * t
}

fn render(phonemes: &[usize], r: &Rendition, audio: &AudioConfig, noise_seed: u64) -> Result<Waveform> {
    let n_frames: usize = r.durations.iter().sum();
    let n = audio.samples_for_frames(n_frames);
    let sr = audio.sample_rate as f64;
    let half = audio.frame_samples() as f64 / 2.0;
    let hop = audio.hop_samples() as f64;

    let mut frame_phone = Vec::with_capacity(n_frames);
    for (k, &d) in r.durations.iter().enumerate() {
        frame_phone.extend(std::iter::repeat_n(k, d));
    }
    let f0: Vec<f64> = frame_phone.iter().map(|&k| r.pitch[k]).collect();
    let amp: Vec<f64> = frame_phone.iter().map(|&k| r.amplitude[k]).collect();

    let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let pos = (t as f64 - half) / hop;
        let k = frame_phone[(pos.round().max(0.0) as usize).min(n_frames - 1)];
        let p = phonemes[k];
        let a = interp(&amp, pos);
        let z: f64 = noise.sample(StandardNormal);
        let hz = interp(&f0, pos);
        phase = (phase + 2.0 * PI * hz / sr) % (2.0 * PI);
        let s = if is_voiced(p) {
            let (f1, f2) = formants(p);
            let (s1, c1) = phase.sin_cos();
            let (mut prev, mut cur) = (0.0, s1);
            let (mut acc, mut norm) = (0.0, 0.0);
            let mut h = 1;
            while h as f64 * hz < MAX_HARMONIC_HZ {
                let fh = h as f64 * hz;
                let w = 1.0 / (1.0 + ((fh - f1) / FORMANT_BANDWIDTH).powi(2))
                    + 1.0 / (1.0 + ((fh - f2) / FORMANT_BANDWIDTH).powi(2))
                    + 0.1 / h as f64;
                acc += w * cur;
                norm += w;
                let next = 2.0 * c1 * cur - prev;
                prev = cur;
                cur = next;
                h += 1;
            }
            a * acc / norm + 1e-4 * z
        } else {
            0.3 * a * z / 3.0
        };
        out.push(s);
    }
    Waveform::new(out, audio.sample_rate)
}

fn utterance_seed(seed: u64, speaker: u32, u: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (u64::from(speaker) << 40)
        ^ (u as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Builds a paired corpus. Every utterance has an L1 member with the base
/// prosody and an L2 member perturbed by its accent's magnitude; with
/// magnitude 0 the two waveforms are bit-identical.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let audio = spec.audio();
    let voiced_ids: Vec<usize> = (0..PHONEMES.len() - 1).collect();
    let mut records = Vec::new();
    let mut waveforms = BTreeMap::new();
    let mut magnitudes = BTreeMap::new();

    let mut spk_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speaker_f0: Vec<f64> = (0..spec.n_speakers).map(|_| spk_rng.gen_range(110.0..150.0)).collect();

    for s in 0..spec.n_speakers {
        let accent = spec.accent_of(s);
        for u in 0..spec.utterances_per_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(spec.seed, s, u));
            let n_ph = rng.gen_range(spec.min_phonemes..=spec.max_phonemes);
            let phonemes: Vec<usize> = (0..n_ph)
                .map(|_| voiced_ids[rng.gen_range(0..voiced_ids.len())])
                .collect();
            let durations: Vec<usize> = (0..n_ph)
                .map(|_| rng.gen_range(spec.min_frames..=spec.max_frames))
                .collect();
            let phase0 = rng.gen_range(0.0..2.0 * PI);
            let base = speaker_f0[s as usize] * rng.gen_range(0.95..1.05);
            let pitch: Vec<f64> = (0..n_ph)
                .map(|k| base + 12.0 * (phase0 + 0.8 * k as f64).sin() - 1.5 * k as f64)
                .collect();
            let amplitude: Vec<f64> = (0..n_ph).map(|_| rng.gen_range(0.15..0.35)).collect();
            let excursion: Vec<f64> = (0..n_ph).map(|_| rng.sample(StandardNormal)).collect();
            let jitter: f64 = rng.gen_range(-1.0..=1.0);
            let noise_seed: u64 = rng.gen();

            let m = spec.magnitudes[accent as usize] * (1.0 + spec.magnitude_jitter * jitter);
            let p = &spec.perturbation;
            let mean = pitch.iter().sum::<f64>() / n_ph as f64;
            let l1 = Rendition {
                durations: durations.clone(),
                pitch: pitch.clone(),
                amplitude: amplitude.clone(),
            };
            let l2 = Rendition {
                durations: durations
                    .iter()
                    .map(|&d| ((d as f64 * (1.0 + p.duration_stretch * m)).round() as usize).max(1))
                    .collect(),
                pitch: pitch
                    .iter()
                    .zip(&excursion)
                    .map(|(&f, &z)| f + (f - mean) * p.contour_gain * m + p.pitch_shift_hz * m + p.excursion_hz * z * m)
                    .collect(),
                amplitude: amplitude.iter().map(|&a| a * (1.0 + p.energy_gain * m)).collect(),
            };

            let uid = format!("spk{s:02}_{u:04}");
            for (domain, rend) in [(Domain::L1, l1), (Domain::L2, l2)] {
                let rel = PathBuf::from("wav").join(format!("{uid}_{domain}.wav"));
                let w = render(&phonemes, &rend, &audio, noise_seed)?;
                records.push(UtteranceRecord {
                    utterance_id: uid.clone(),
                    speaker_id: s,
                    accent_id: accent,
                    domain,
                    wav_path: rel.clone(),
                    phoneme_ids: phonemes.clone(),
                    durations: rend.durations,
                    intensity: None,
                });
                waveforms.insert(rel, w);
            }
            magnitudes.insert(uid, m);
        }
    }
    Ok(SyntheticCorpus {
        manifest: CorpusManifest {
            root: PathBuf::new(),
            records,
            splits: BTreeMap::new(),
            spec: Some(spec.clone()),
        },
        waveforms,
        magnitudes,
    })
}
