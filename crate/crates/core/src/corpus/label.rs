//! Waveform → prosodic functionals → ranking function → intensity labels.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusManifest, Domain, UtteranceRecord};
use crate::dsp::wav::read_wav;
use crate::dsp::{prosody_track, AudioConfig};
use crate::error::{Error, Result};
use crate::features::{compute_functionals, AccentFeatureVector};
use crate::ranker::{build_constraint_sets, train_rank_svm, PairingPolicy, RankModel};

/// Matched score gaps below this (relative) count as no separation.
const SEPARATION_EPS: f64 = 1e-12;
/// Half-width of the score bounds, in score ranges, when nothing separates.
const DEGENERATE_SPREAD: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    #[serde(rename = "C")]
    pub c: f64,
    /// Extra random pairs; `None` means twice the matched-pair count.
    pub random_pairs: Option<usize>,
    pub seed: u64,
    /// Worker threads for feature extraction; 0 uses all cores.
    pub jobs: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            c: 1.0,
            random_pairs: None,
            seed: 0,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabelOutcome {
    pub manifest: CorpusManifest,
    pub model: RankModel,
    pub l1_features: Vec<AccentFeatureVector>,
    pub l2_features: Vec<AccentFeatureVector>,
    /// Raw ranking scores by utterance id.
    pub l1_scores: BTreeMap<String, f64>,
    pub l2_scores: BTreeMap<String, f64>,
}

impl LabelOutcome {
    /// Share of utterances whose L2 rendition outscores its L1 rendition.
    pub fn pair_accuracy(&self) -> f64 {
        let hits = self
            .l2_scores
            .iter()
            .filter(|(id, s2)| self.l1_scores.get(*id).is_some_and(|s1| *s2 > s1))
            .count();
        hits as f64 / self.l2_scores.len().max(1) as f64
    }
}

fn features_of(m: &CorpusManifest, r: &UtteranceRecord, audio: &AudioConfig) -> Result<AccentFeatureVector> {
    let w = read_wav(&m.wav_path(r))?.to_rate(audio.sample_rate)?;
    let track = prosody_track(&w, audio)?;
    compute_functionals(&track, &r.utterance_id, r.speaker_id, r.accent_id)
}

/// Functionals for every record of `domain`, in manifest order.
pub fn extract_features(
    m: &CorpusManifest,
    domain: Domain,
    audio: &AudioConfig,
    jobs: usize,
) -> Result<Vec<AccentFeatureVector>> {
    let records: Vec<&UtteranceRecord> = m.domain(domain).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::ConfigError(format!("thread pool: {e}")))?;
    pool.install(|| records.par_iter().map(|r| features_of(m, r, audio)).collect())
}

/// Fits one ranking function over all accents on matched L1/L2 pairs and
/// writes min-max normalized scores into the L2 records. L1 records get
/// no label.
pub fn label_intensity(m: &CorpusManifest, audio: &AudioConfig, cfg: &LabelConfig) -> Result<LabelOutcome> {
    for r in m.domain(Domain::L2) {
        if m.find(&r.utterance_id, Domain::L1).is_none() {
            return Err(Error::UnpairedUtterance(r.utterance_id.clone()));
        }
    }
    let l2 = extract_features(m, Domain::L2, audio, cfg.jobs)?;
    if l2.is_empty() {
        return Err(Error::EmptyInput("L2 records"));
    }
    let l1 = extract_features(m, Domain::L1, audio, cfg.jobs)?;
    let policy = PairingPolicy {
        random_pairs: cfg.random_pairs,
        seed: cfg.seed,
    };
    let cs = build_constraint_sets(&l1, &l2, &policy)?;
    let mut model = train_rank_svm(&cs, cfg.c)?;

    let s2: Vec<f64> = l2.iter().map(|f| model.score(f)).collect::<Result<_>>()?;
    let l1_scores: BTreeMap<String, f64> = l1
        .iter()
        .map(|f| Ok((f.utterance_id.clone(), model.score(f)?)))
        .collect::<Result<_>>()?;
    model.set_bounds(&s2);
    let separated = l2
        .iter()
        .zip(&s2)
        .any(|(f, s)| (s - l1_scores[&f.utterance_id]).abs() > SEPARATION_EPS * (1.0 + s.abs()));
    if !separated {
        // No rendition differs from its reference: compress around 0.5.
        let mid = 0.5 * (model.score_min + model.score_max);
        let half = DEGENERATE_SPREAD * (model.score_max - model.score_min);
        model.score_min = mid - half;
        model.score_max = mid + half;
    }
    let mut out = m.clone();
    let labels: BTreeMap<&str, f64> = l2
        .iter()
        .map(|f| Ok((f.utterance_id.as_str(), model.intensity(f)?)))
        .collect::<Result<_>>()?;
    for r in &mut out.records {
        r.intensity = match r.domain {
            Domain::L2 => labels.get(r.utterance_id.as_str()).copied(),
            Domain::L1 => None,
        };
    }
    let l2_scores = l2.iter().zip(&s2).map(|(f, &s)| (f.utterance_id.clone(), s)).collect();
    Ok(LabelOutcome {
        manifest: out,
        model,
        l1_features: l1,
        l2_features: l2,
        l1_scores,
        l2_scores,
    })
}
