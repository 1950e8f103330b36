//! Finite-difference check of the complete training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use super::network::{total_loss_with_probes, CaiTts, Consistency, LossTargets, VarianceTargets};
use super::train::TrainingItem;
use crate::error::Result;
use crate::nn::{grad_check_params, Graph, ParamCheck, ParamStore, Tensor};

/// Fixed two-phoneme item sized for `model`.
pub fn reference_item(model: &CaiTts) -> Result<TrainingItem> {
    let cfg = &model.config;
    let durations = vec![1, 3];
    let frames: usize = durations.iter().sum();
    let mel: Vec<f64> = (0..frames * cfg.mel_dim).map(|k| ((k as f64) * 0.37).sin()).collect();
    Ok(TrainingItem {
        utterance_id: "reference".into(),
        phoneme_ids: vec![2 % cfg.n_phonemes, 5 % cfg.n_phonemes],
        speaker_id: 1 % cfg.n_speakers,
        accent_id: 0,
        intensity: 0.7,
        targets: LossTargets {
            mel: Tensor::new(vec![frames, cfg.mel_dim], mel)?,
            durations,
            pitch: vec![0.4, -1.1],
            energy: vec![-0.3, 0.8],
        },
    })
}

/// Spread of the noise added to every parameter before checking.
/// Zero-initialized biases behind dead ReLUs otherwise leave later ReLUs
/// exactly at their kink.
pub const PARAM_JITTER: f64 = 0.05;

/// Checks `l_final` (label term plus one consistency probe at 0.3)
/// against central differences for every parameter of a toy model,
/// evaluated at a randomly jittered point.
pub fn check_full_loss(seed: u64, eps: f64) -> Result<Vec<ParamCheck>> {
    let mut model = CaiTts::new(ModelConfig::toy(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let t = model.params.get_mut(&name).expect("listed");
        for v in t.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += PARAM_JITTER * z;
        }
    }
    let item = reference_item(&model)?;
    let vt = VarianceTargets {
        durations: item.targets.durations.clone(),
        pitch: item.targets.pitch.clone(),
        energy: item.targets.energy.clone(),
    };
    grad_check_params(
        &model.params,
        |g: &mut Graph, store: &ParamStore| {
            let m = CaiTts {
                params: store.clone(),
                ..model.clone()
            };
            let i = g.constant(Tensor::new(vec![1, 1], vec![item.intensity])?);
            let pred = m.forward_train(
                g,
                &item.phoneme_ids,
                item.speaker_id,
                item.accent_id,
                i,
                &vt,
                Consistency::Joint,
            )?;
            let probe = m.consistency_probe(
                g,
                pred.text,
                item.speaker_id,
                item.accent_id,
                0.3,
                &item.targets.durations,
                Consistency::Joint,
            )?;
            Ok(total_loss_with_probes(g, &pred, &item.targets, item.intensity, &[(probe, 0.3)])?.l_final)
        },
        eps,
    )
}
