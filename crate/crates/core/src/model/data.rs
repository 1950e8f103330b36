//! Turns labeled L2 records into training items.

use rayon::prelude::*;

use super::network::{LossTargets, ProsodyStats};
use super::train::TrainingItem;
use crate::corpus::{reconcile_durations, CorpusManifest, UtteranceRecord};
use crate::dsp::wav::read_wav;
use crate::dsp::{analyze, fit_stats, phoneme_average, phoneme_average_voiced, AudioConfig};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Unnormalized per-utterance material.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub record: UtteranceRecord,
    pub mel: Vec<Vec<f64>>,
    /// Frame-level pitch (0 for unvoiced) and energy.
    pub pitch_frames: Vec<f64>,
    pub energy_frames: Vec<f64>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

/// Unvoiced phonemes take the value of the nearest voiced one (the
/// earlier on ties); an all-unvoiced sequence is left at zero.
pub fn fill_unvoiced(values: &[f64]) -> Vec<f64> {
    let voiced: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    if voiced.is_empty() {
        return values.to_vec();
    }
    (0..values.len())
        .map(|i| {
            if values[i] > 0.0 {
                return values[i];
            }
            let j = *voiced.iter().min_by_key(|&&j| (j.abs_diff(i), j)).expect("non-empty");
            values[j]
        })
        .collect()
}

pub fn prepare_record(m: &CorpusManifest, r: &UtteranceRecord, audio: &AudioConfig) -> Result<Prepared> {
    let w = read_wav(&m.wav_path(r))?.to_rate(audio.sample_rate)?;
    let a = analyze(&w, audio)?;
    let mut record = r.clone();
    reconcile_durations(&mut record, a.mel.len())?;
    let pitch = fill_unvoiced(&phoneme_average_voiced(&a.track.pitch_hz, &record.durations)?);
    let energy = phoneme_average(&a.track.energy, &record.durations)?;
    Ok(Prepared {
        record,
        mel: a.mel,
        pitch_frames: a.track.pitch_hz,
        energy_frames: a.track.energy,
        pitch,
        energy,
    })
}

pub fn prepare_records(
    m: &CorpusManifest,
    records: &[&UtteranceRecord],
    audio: &AudioConfig,
    jobs: usize,
) -> Result<Vec<Prepared>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::ConfigError(format!("thread pool: {e}")))?;
    pool.install(|| records.par_iter().map(|r| prepare_record(m, r, audio)).collect())
}

/// Pitch statistics over voiced phoneme values, energy over all.
pub fn fit_prosody(items: &[Prepared]) -> Result<ProsodyStats> {
    let pitch: Vec<f64> = items
        .iter()
        .flat_map(|p| p.pitch.iter().copied())
        .filter(|&v| v > 0.0)
        .collect();
    let energy: Vec<f64> = items.iter().flat_map(|p| p.energy.iter().copied()).collect();
    Ok(ProsodyStats {
        pitch: fit_stats(&pitch)?,
        energy: fit_stats(&energy)?,
    })
}

/// Normalized training item; the record must carry an intensity label.
pub fn to_training_item(p: &Prepared, stats: &ProsodyStats) -> Result<TrainingItem> {
    let r = &p.record;
    let intensity = r
        .intensity
        .ok_or_else(|| Error::InvalidInput(format!("{} has no intensity label", r.utterance_id)))?;
    let mel = Tensor::from_rows(&p.mel)?;
    Ok(TrainingItem {
        utterance_id: r.utterance_id.clone(),
        phoneme_ids: r.phoneme_ids.clone(),
        speaker_id: r.speaker_id as usize,
        accent_id: r.accent_id as usize,
        intensity,
        targets: LossTargets {
            mel,
            durations: r.durations.clone(),
            pitch: p.pitch.iter().map(|&v| stats.pitch.normalize(v)).collect(),
            energy: p.energy.iter().map(|&v| stats.energy.normalize(v)).collect(),
        },
    })
}
