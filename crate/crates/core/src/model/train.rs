//! Teacher-forced training loop with Adam and the Noam schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{total_loss_with_probes, CaiTts, Consistency, LossTargets, Losses, VarianceTargets};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, NoamSchedule, Tensor};

/// One utterance prepared for training. Pitch and energy are normalized
/// phoneme-level values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub utterance_id: String,
    pub phoneme_ids: Vec<usize>,
    pub speaker_id: usize,
    pub accent_id: usize,
    pub intensity: f64,
    pub targets: LossTargets,
}

impl TrainingItem {
    pub fn validate(&self) -> Result<()> {
        let t = self.phoneme_ids.len();
        let tg = &self.targets;
        if t == 0 {
            return Err(Error::EmptyInput("phoneme sequence"));
        }
        if tg.durations.len() != t || tg.pitch.len() != t || tg.energy.len() != t {
            return Err(Error::ShapeError(format!(
                "{}: targets do not cover {t} phonemes",
                self.utterance_id
            )));
        }
        let frames: usize = tg.durations.iter().sum();
        if tg.mel.rows() != frames {
            return Err(Error::AlignmentMismatch(format!(
                "{}: durations sum to {frames}, mel has {} frames",
                self.utterance_id,
                tg.mel.rows()
            )));
        }
        Ok(())
    }

    fn variance_targets(&self) -> VarianceTargets {
        VarianceTargets {
            durations: self.targets.durations.clone(),
            pitch: self.targets.pitch.clone(),
            energy: self.targets.energy.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub lr_scale: f64,
    pub consistency: Consistency,
    /// Extra consistency terms per utterance at intensities drawn
    /// uniformly from `probe_range`; 0 keeps only the label term.
    pub consistency_probes: usize,
    pub probe_range: (f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            warmup_steps: 200,
            lr_scale: 1.0,
            consistency: Consistency::Joint,
            consistency_probes: 1,
            probe_range: (0.05, 0.95),
            seed: 0,
        }
    }
}

pub struct Trainer {
    pub model: CaiTts,
    pub config: TrainConfig,
    schedule: NoamSchedule,
    adam: Adam,
    step: usize,
    pub history: Vec<Losses>,
}

impl Trainer {
    pub fn new(model: CaiTts, config: TrainConfig) -> Result<Self> {
        let (lo, hi) = config.probe_range;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::ConfigError(format!(
                "probe_range ({lo}, {hi}) must lie inside (0, 1)"
            )));
        }
        if config.batch_size == 0 {
            return Err(Error::ConfigError("batch_size must be positive".into()));
        }
        let schedule = NoamSchedule {
            model_dim: model.config.hidden_dim,
            warmup_steps: config.warmup_steps,
            scale: config.lr_scale,
        };
        let adam = Adam::new(&model.params, AdamConfig::default());
        Ok(Trainer {
            model,
            config,
            schedule,
            adam,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Gradients averaged over `batch` plus the mean losses.
    pub fn gradients(&self, batch: &[TrainingItem]) -> Result<(Vec<Vec<f64>>, Losses)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("training batch"));
        }
        let params = &self.model.params;
        let mut grads: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        let mut acc = [0.0; 6];
        for (k, item) in batch.iter().enumerate() {
            item.validate()?;
            let seed = self
                .config
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((self.step * batch.len() + k) as u64);
            let mut g = Graph::new(true, seed);
            let i = g.constant(Tensor::new(vec![1, 1], vec![item.intensity])?);
            let pred = self.model.forward_train(
                &mut g,
                &item.phoneme_ids,
                item.speaker_id,
                item.accent_id,
                i,
                &item.variance_targets(),
                self.config.consistency,
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut probes = Vec::with_capacity(self.config.consistency_probes);
            for _ in 0..self.config.consistency_probes {
                let (lo, hi) = self.config.probe_range;
                let i_r = rng.gen_range(lo..hi);
                let v = self.model.consistency_probe(
                    &mut g,
                    pred.text,
                    item.speaker_id,
                    item.accent_id,
                    i_r,
                    &item.targets.durations,
                    self.config.consistency,
                )?;
                probes.push((v, i_r));
            }
            let lv = total_loss_with_probes(&mut g, &pred, &item.targets, item.intensity, &probes)?;
            let l = lv.values(&g);
            for (a, v) in acc.iter_mut().zip(l.components().iter().chain([l.l_final].iter())) {
                *a += v;
            }
            let gr = g.backward(lv.l_final)?;
            for (id, var) in g.bound_params() {
                if let Some(d) = gr.get(var) {
                    for (x, y) in grads[id].iter_mut().zip(d) {
                        *x += y;
                    }
                }
            }
        }
        let n = batch.len() as f64;
        for gvec in &mut grads {
            gvec.iter_mut().for_each(|x| *x /= n);
        }
        let m = acc.map(|a| a / n);
        let losses = Losses {
            l_mel: m[0],
            l_dur: m[1],
            l_p_pitch: m[2],
            l_p_energy: m[3],
            l_cc: m[4],
            l_final: (((m[0] + m[1]) + m[2]) + m[3]) + m[4],
        };
        Ok((grads, losses))
    }

    /// One optimizer step on `batch`; returns the losses before the update.
    pub fn train_step(&mut self, batch: &[TrainingItem]) -> Result<Losses> {
        let (grads, losses) = self.gradients(batch)?;
        if !losses.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite loss at step {}: {losses:?}",
                self.step + 1
            )));
        }
        self.step += 1;
        let lr = self.schedule.lr(self.step);
        self.adam.step(&mut self.model.params, &grads, lr)?;
        self.history.push(losses);
        Ok(losses)
    }

    /// Runs `config.steps` steps cycling through `items` in fixed-size
    /// batches. `on_step` sees each step number and its losses.
    pub fn fit<F: FnMut(usize, &Losses)>(&mut self, items: &[TrainingItem], mut on_step: F) -> Result<()> {
        if items.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let bs = self.config.batch_size.min(items.len());
        let mut cursor = 0;
        for _ in 0..self.config.steps {
            let batch: Vec<TrainingItem> = (0..bs).map(|k| items[(cursor + k) % items.len()].clone()).collect();
            cursor = (cursor + bs) % items.len();
            let l = self.train_step(&batch)?;
            on_step(self.step, &l);
        }
        Ok(())
    }

    pub fn into_model(self) -> CaiTts {
        self.model
    }
}
