//! Text encoder, accent variance adaptor, mel decoder and intensity predictor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::dsp::NormStats;
use crate::error::{Error, Result};
use crate::nn::{
    conv1d_forward, embedding_lookup, gru_forward, layer_norm, linear_forward, mse_loss, self_attention_forward,
    sinusoidal_positions, Graph, GruParams, GruWeights, ParamStore, Tensor, Var,
};

/// Std of the seeded normal used for lookup tables.
const TABLE_INIT_STD: f64 = 0.01;

/// Normalization of phoneme-level pitch and energy targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyStats {
    pub pitch: NormStats,
    pub energy: NormStats,
}

impl Default for ProsodyStats {
    fn default() -> Self {
        let unit = NormStats { mean: 0.0, std: 1.0 };
        ProsodyStats {
            pitch: unit,
            energy: unit,
        }
    }
}

/// Teacher-forcing inputs for the adaptor.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTargets {
    pub durations: Vec<usize>,
    /// Normalized phoneme-level pitch.
    pub pitch: Vec<f64>,
    /// Normalized phoneme-level energy.
    pub energy: Vec<f64>,
}

/// What drives the length regulator and the prosody embeddings.
#[derive(Debug, Clone, Copy)]
pub enum Regulation<'a> {
    /// Ground-truth durations and ground-truth normalized prosody.
    Teacher(&'a VarianceTargets),
    /// Given durations, predicted prosody.
    Durations(&'a [usize]),
    /// Rounded predicted durations and predicted prosody.
    Predicted,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptorOutput {
    /// Speaker code `[1, hidden]`.
    pub speaker_code: Var,
    /// Accent and intensity embeddings concatenated, `[1, hidden]`.
    pub accent_code: Var,
    /// H'_ph
    pub accented: Var,
    /// H''_ph
    pub accented_prosody: Var,
    pub pitch_pred: Var,
    pub energy_pred: Var,
    pub log_duration_pred: Var,
    pub pitch_embedding: Var,
    pub energy_embedding: Var,
    /// H_fm
    pub frames: Var,
}

/// Everything the loss needs from one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Predictions {
    /// Encoder output, shared with consistency probes.
    pub text: Var,
    pub mel: Var,
    pub log_duration: Var,
    pub pitch: Var,
    pub energy: Var,
    pub intensity: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub l_mel: f64,
    pub l_dur: f64,
    pub l_p_pitch: f64,
    pub l_p_energy: f64,
    pub l_cc: f64,
    pub l_final: f64,
}

impl Losses {
    pub fn components(&self) -> [f64; 5] {
        [self.l_mel, self.l_dur, self.l_p_pitch, self.l_p_energy, self.l_cc]
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|v| v.is_finite()) && self.l_final.is_finite()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_mel: Var,
    pub l_dur: Var,
    pub l_p_pitch: Var,
    pub l_p_energy: Var,
    pub l_cc: Var,
    pub l_final: Var,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> Losses {
        let v = |x: Var| g.value(x).item();
        Losses {
            l_mel: v(self.l_mel),
            l_dur: v(self.l_dur),
            l_p_pitch: v(self.l_p_pitch),
            l_p_energy: v(self.l_p_energy),
            l_cc: v(self.l_cc),
            l_final: v(self.l_final),
        }
    }
}

/// Ground truth for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTargets {
    /// `[frames, mel_dim]`
    pub mel: Tensor,
    pub durations: Vec<usize>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

/// How the consistency loss reaches the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    /// Gradients of the consistency loss flow through the generated mel.
    Joint,
    /// The predictor reads a detached copy of the generated mel, so only
    /// the predictor learns from the consistency loss.
    Detached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRequest {
    pub phoneme_ids: Vec<usize>,
    pub speaker_id: usize,
    pub accent_id: usize,
    pub intensity: f64,
}

impl SynthesisRequest {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        check_intensity(self.intensity)?;
        if self.phoneme_ids.is_empty() {
            return Err(Error::EmptyInput("phoneme sequence"));
        }
        if self.speaker_id >= cfg.n_speakers {
            return Err(Error::IndexError {
                index: self.speaker_id,
                len: cfg.n_speakers,
            });
        }
        if self.accent_id >= cfg.n_accents {
            return Err(Error::IndexError {
                index: self.accent_id,
                len: cfg.n_accents,
            });
        }
        if let Some(&p) = self.phoneme_ids.iter().find(|&&p| p >= cfg.n_phonemes) {
            return Err(Error::IndexError {
                index: p,
                len: cfg.n_phonemes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    /// `[frames, mel_dim]`
    pub mel: Tensor,
    pub durations: Vec<usize>,
    /// Predicted phoneme pitch in Hz (denormalized).
    pub pitch_hz: Vec<f64>,
    pub energy: Vec<f64>,
}

pub fn check_intensity(i: f64) -> Result<()> {
    if i > 0.0 && i < 1.0 {
        Ok(())
    } else {
        Err(Error::IntensityRange(i))
    }
}

/// Frame count from a predicted log(1 + d), rounded with a floor of one.
pub fn duration_from_log(log_d: f64) -> usize {
    let d = (log_d.exp() - 1.0).round();
    if d.is_finite() && d >= 1.0 {
        d as usize
    } else {
        1
    }
}

/// Row indices that repeat phoneme `i` `durations[i]` times.
pub fn expand_durations(durations: &[usize]) -> Vec<usize> {
    durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect()
}

fn column(values: &[f64]) -> Tensor {
    Tensor::new(vec![values.len(), 1], values.to_vec()).expect("column shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaiTts {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub prosody: ProsodyStats,
}

fn add_block(p: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let (d, f, k) = (cfg.hidden_dim, cfg.conv_filter, cfg.conv_kernel);
    for w in ["wq", "wk", "wv", "wo"] {
        p.uniform(&format!("{prefix}.attn.{w}"), &[d, d], rng)?;
    }
    p.ones(&format!("{prefix}.ln1.gamma"), &[d])?;
    p.zeros(&format!("{prefix}.ln1.beta"), &[d])?;
    p.uniform(&format!("{prefix}.conv1.kernel"), &[k, d, f], rng)?;
    p.zeros(&format!("{prefix}.conv1.bias"), &[f])?;
    p.uniform(&format!("{prefix}.conv2.kernel"), &[k, f, d], rng)?;
    p.zeros(&format!("{prefix}.conv2.bias"), &[d])?;
    p.ones(&format!("{prefix}.ln2.gamma"), &[d])?;
    p.zeros(&format!("{prefix}.ln2.beta"), &[d])?;
    Ok(())
}

fn add_predictor(p: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let (d, c, k) = (cfg.hidden_dim, cfg.predictor_channels, cfg.predictor_kernel);
    p.uniform(&format!("{prefix}.conv1.kernel"), &[k, d, c], rng)?;
    p.zeros(&format!("{prefix}.conv1.bias"), &[c])?;
    p.ones(&format!("{prefix}.ln1.gamma"), &[c])?;
    p.zeros(&format!("{prefix}.ln1.beta"), &[c])?;
    p.uniform(&format!("{prefix}.conv2.kernel"), &[k, c, c], rng)?;
    p.zeros(&format!("{prefix}.conv2.bias"), &[c])?;
    p.ones(&format!("{prefix}.ln2.gamma"), &[c])?;
    p.zeros(&format!("{prefix}.ln2.beta"), &[c])?;
    p.uniform(&format!("{prefix}.fc.weight"), &[c, 1], rng)?;
    p.zeros(&format!("{prefix}.fc.bias"), &[1])?;
    Ok(())
}

fn add_gru(p: &mut ParamStore, prefix: &str, din: usize, h: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    p.uniform(&format!("{prefix}.w_x"), &[din, 3 * h], rng)?;
    p.uniform(&format!("{prefix}.w_h"), &[h, 3 * h], rng)?;
    p.zeros(&format!("{prefix}.b_x"), &[3 * h])?;
    p.zeros(&format!("{prefix}.b_h"), &[3 * h])?;
    Ok(())
}

impl CaiTts {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = cfg.hidden_dim;

        p.normal(
            "encoder.phoneme_embedding",
            &[cfg.n_phonemes, d],
            TABLE_INIT_STD,
            &mut rng,
        )?;
        for b in 0..cfg.n_fft_blocks {
            add_block(&mut p, &format!("encoder.block{b}"), cfg, &mut rng)?;
        }

        p.normal("adaptor.speaker_table", &[cfg.n_speakers, d], TABLE_INIT_STD, &mut rng)?;
        p.normal(
            "adaptor.accent_table",
            &[cfg.n_accents, cfg.accent_dim],
            TABLE_INIT_STD,
            &mut rng,
        )?;
        p.uniform("adaptor.intensity.weight", &[1, cfg.intensity_dim], &mut rng)?;
        p.zeros("adaptor.intensity.bias", &[cfg.intensity_dim])?;
        for name in ["pitch", "energy", "duration"] {
            add_predictor(&mut p, &format!("adaptor.{name}"), cfg, &mut rng)?;
        }
        for name in ["pitch_embed", "energy_embed"] {
            p.uniform(
                &format!("adaptor.{name}.kernel"),
                &[cfg.upsample_kernel, 1, d],
                &mut rng,
            )?;
            p.zeros(&format!("adaptor.{name}.bias"), &[d])?;
        }

        for b in 0..cfg.n_fft_blocks {
            add_block(&mut p, &format!("decoder.block{b}"), cfg, &mut rng)?;
        }
        p.uniform("decoder.mel.weight", &[d, cfg.mel_dim], &mut rng)?;
        p.zeros("decoder.mel.bias", &[cfg.mel_dim])?;

        let h = cfg.gru_hidden;
        add_gru(&mut p, "intensity_predictor.gru.fwd", cfg.mel_dim, h, &mut rng)?;
        add_gru(&mut p, "intensity_predictor.gru.bwd", cfg.mel_dim, h, &mut rng)?;
        p.uniform("intensity_predictor.fc.weight", &[2 * h, 1], &mut rng)?;
        p.zeros("intensity_predictor.fc.bias", &[1])?;

        Ok(CaiTts {
            config,
            params: p,
            prosody: ProsodyStats::default(),
        })
    }

    fn bind(&self, g: &mut Graph, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("parameter {name} missing from store"));
        g.param(&self.params, id)
    }

    fn fft_block(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let rate = self.config.dropout;
        let [wq, wk, wv, wo] = ["wq", "wk", "wv", "wo"].map(|w| self.bind(g, &format!("{prefix}.attn.{w}")));
        let a = self_attention_forward(g, x, self.config.n_heads, wq, wk, wv, wo)?;
        let a = g.dropout(a, rate);
        let x = g.add(x, a)?;
        let (g1, b1) = (
            self.bind(g, &format!("{prefix}.ln1.gamma")),
            self.bind(g, &format!("{prefix}.ln1.beta")),
        );
        let x = layer_norm(g, x, g1, b1)?;

        let (k1, c1) = (
            self.bind(g, &format!("{prefix}.conv1.kernel")),
            self.bind(g, &format!("{prefix}.conv1.bias")),
        );
        let c = conv1d_forward(g, x, k1, c1)?;
        let c = g.relu(c);
        let (k2, c2) = (
            self.bind(g, &format!("{prefix}.conv2.kernel")),
            self.bind(g, &format!("{prefix}.conv2.bias")),
        );
        let c = conv1d_forward(g, c, k2, c2)?;
        let c = g.dropout(c, rate);
        let x = g.add(x, c)?;
        let (g2, b2) = (
            self.bind(g, &format!("{prefix}.ln2.gamma")),
            self.bind(g, &format!("{prefix}.ln2.beta")),
        );
        layer_norm(g, x, g2, b2)
    }

    fn with_positions(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (t, d) = (g.value(x).rows(), g.value(x).cols());
        let pe = g.constant(sinusoidal_positions(t, d));
        g.add(x, pe)
    }

    /// Phoneme embedding plus positions through the encoder stack, `[T, hidden]`.
    pub fn encode_text(&self, g: &mut Graph, phoneme_ids: &[usize]) -> Result<Var> {
        if phoneme_ids.is_empty() {
            return Err(Error::EmptyInput("phoneme sequence"));
        }
        let table = self.bind(g, "encoder.phoneme_embedding");
        let emb = embedding_lookup(g, table, phoneme_ids)?;
        let mut x = self.with_positions(g, emb)?;
        for b in 0..self.config.n_fft_blocks {
            x = self.fft_block(g, x, &format!("encoder.block{b}"))?;
        }
        Ok(x)
    }

    /// Conv → ReLU → LN → dropout, twice, then a scalar per position `[T, 1]`.
    fn variance_predictor(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let rate = self.config.dropout;
        let mut h = x;
        for layer in ["1", "2"] {
            let k = self.bind(g, &format!("{prefix}.conv{layer}.kernel"));
            let b = self.bind(g, &format!("{prefix}.conv{layer}.bias"));
            h = conv1d_forward(g, h, k, b)?;
            h = g.relu(h);
            let gamma = self.bind(g, &format!("{prefix}.ln{layer}.gamma"));
            let beta = self.bind(g, &format!("{prefix}.ln{layer}.beta"));
            h = layer_norm(g, h, gamma, beta)?;
            h = g.dropout(h, rate);
        }
        let w = self.bind(g, &format!("{prefix}.fc.weight"));
        let b = self.bind(g, &format!("{prefix}.fc.bias"));
        linear_forward(g, h, w, b)
    }

    fn upsample(&self, g: &mut Graph, scalars: Var, prefix: &str) -> Result<Var> {
        let k = self.bind(g, &format!("{prefix}.kernel"));
        let b = self.bind(g, &format!("{prefix}.bias"));
        conv1d_forward(g, scalars, k, b)
    }

    /// Injects speaker, accent and intensity, predicts phoneme pitch,
    /// energy and log-duration, and expands to frame level.
    ///
    /// `intensity` is a `[1, 1]` node so callers can differentiate with
    /// respect to it.
    pub fn accent_variance_adaptor(
        &self,
        g: &mut Graph,
        h_ph: Var,
        speaker_id: usize,
        accent_id: usize,
        intensity: Var,
        regulation: Regulation<'_>,
    ) -> Result<AdaptorOutput> {
        check_intensity(g.value(intensity).item())?;
        let t_len = g.value(h_ph).rows();

        let spk_table = self.bind(g, "adaptor.speaker_table");
        let speaker_code = embedding_lookup(g, spk_table, &[speaker_id])?;
        let acc_table = self.bind(g, "adaptor.accent_table");
        let e_a = embedding_lookup(g, acc_table, &[accent_id])?;
        let (wi, bi) = (
            self.bind(g, "adaptor.intensity.weight"),
            self.bind(g, "adaptor.intensity.bias"),
        );
        let e_i = linear_forward(g, intensity, wi, bi)?;
        let accent_code = g.concat_cols(&[e_a, e_i])?;
        let cond = g.add(accent_code, speaker_code)?;
        let accented = g.add_row(h_ph, cond)?;

        let pitch_pred = self.variance_predictor(g, accented, "adaptor.pitch")?;
        let energy_pred = self.variance_predictor(g, accented, "adaptor.energy")?;
        let log_duration_pred = self.variance_predictor(g, accented, "adaptor.duration")?;

        let check_durations = |d: &[usize]| {
            if d.len() != t_len {
                return Err(Error::ShapeError(format!("{} durations for {t_len} phonemes", d.len())));
            }
            if d.contains(&0) {
                return Err(Error::AlignmentMismatch("zero target duration".into()));
            }
            Ok(())
        };
        let (pitch_src, energy_src, durations) = match regulation {
            Regulation::Durations(d) => {
                check_durations(d)?;
                (pitch_pred, energy_pred, d.to_vec())
            }
            Regulation::Teacher(t) => {
                if t.durations.len() != t_len || t.pitch.len() != t_len || t.energy.len() != t_len {
                    return Err(Error::ShapeError(format!(
                        "targets for {} / {} / {} phonemes, sequence has {t_len}",
                        t.durations.len(),
                        t.pitch.len(),
                        t.energy.len()
                    )));
                }
                if t.durations.contains(&0) {
                    return Err(Error::AlignmentMismatch("zero target duration".into()));
                }
                (
                    g.constant(column(&t.pitch)),
                    g.constant(column(&t.energy)),
                    t.durations.clone(),
                )
            }
            Regulation::Predicted => {
                let durs = g
                    .value(log_duration_pred)
                    .data()
                    .iter()
                    .map(|&v| duration_from_log(v))
                    .collect();
                (pitch_pred, energy_pred, durs)
            }
        };
        let pitch_embedding = self.upsample(g, pitch_src, "adaptor.pitch_embed")?;
        let energy_embedding = self.upsample(g, energy_src, "adaptor.energy_embed")?;
        let with_pitch = g.add(accented, pitch_embedding)?;
        let accented_prosody = g.add(with_pitch, energy_embedding)?;
        let frames = g.gather_rows(accented_prosody, &expand_durations(&durations))?;

        Ok(AdaptorOutput {
            speaker_code,
            accent_code,
            accented,
            accented_prosody,
            pitch_pred,
            energy_pred,
            log_duration_pred,
            pitch_embedding,
            energy_embedding,
            frames,
        })
    }

    /// Frame embeddings plus positions through the decoder stack and a
    /// projection to `[frames, mel_dim]`.
    pub fn decode_mel(&self, g: &mut Graph, h_fm: Var) -> Result<Var> {
        if g.value(h_fm).rows() == 0 {
            return Err(Error::EmptyInput("frame sequence"));
        }
        let mut x = self.with_positions(g, h_fm)?;
        for b in 0..self.config.n_fft_blocks {
            x = self.fft_block(g, x, &format!("decoder.block{b}"))?;
        }
        let (w, b) = (self.bind(g, "decoder.mel.weight"), self.bind(g, "decoder.mel.bias"));
        linear_forward(g, x, w, b)
    }

    fn gru_weights(&self, g: &mut Graph, prefix: &str) -> GruWeights {
        GruWeights {
            w_x: self.bind(g, &format!("{prefix}.w_x")),
            w_h: self.bind(g, &format!("{prefix}.w_h")),
            b_x: self.bind(g, &format!("{prefix}.b_x")),
            b_h: self.bind(g, &format!("{prefix}.b_h")),
        }
    }

    /// Bidirectional GRU over mel frames, final states → FC → sigmoid, `[1, 1]`.
    pub fn predict_intensity(&self, g: &mut Graph, mel: Var) -> Result<Var> {
        if g.value(mel).rows() == 0 {
            return Err(Error::EmptyInput("mel frames"));
        }
        let params = GruParams {
            forward: self.gru_weights(g, "intensity_predictor.gru.fwd"),
            backward: Some(self.gru_weights(g, "intensity_predictor.gru.bwd")),
        };
        let h0 = g.constant(Tensor::zeros(&[self.config.gru_hidden]));
        let out = gru_forward(g, mel, h0, &params)?;
        let last = g.concat_cols(&[out.final_forward, out.final_backward.expect("bidirectional")])?;
        let (w, b) = (
            self.bind(g, "intensity_predictor.fc.weight"),
            self.bind(g, "intensity_predictor.fc.bias"),
        );
        let logit = linear_forward(g, last, w, b)?;
        Ok(g.sigmoid(logit))
    }

    /// Teacher-forced pass for training.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        phoneme_ids: &[usize],
        speaker_id: usize,
        accent_id: usize,
        intensity: Var,
        targets: &VarianceTargets,
        consistency: Consistency,
    ) -> Result<Predictions> {
        let h_ph = self.encode_text(g, phoneme_ids)?;
        let ad =
            self.accent_variance_adaptor(g, h_ph, speaker_id, accent_id, intensity, Regulation::Teacher(targets))?;
        let mel = self.decode_mel(g, ad.frames)?;
        let predictor_input = match consistency {
            Consistency::Joint => mel,
            Consistency::Detached => {
                let copy = g.value(mel).clone();
                g.constant(copy)
            }
        };
        let intensity_hat = self.predict_intensity(g, predictor_input)?;
        Ok(Predictions {
            text: h_ph,
            mel,
            log_duration: ad.log_duration_pred,
            pitch: ad.pitch_pred,
            energy: ad.energy_pred,
            intensity: intensity_hat,
        })
    }

    /// Intensity read back from a mel generated at `intensity` with the
    /// given durations and predicted prosody. Used to apply the
    /// consistency loss at intensities other than the utterance label.
    pub fn consistency_probe(
        &self,
        g: &mut Graph,
        text: Var,
        speaker_id: usize,
        accent_id: usize,
        intensity: f64,
        durations: &[usize],
        consistency: Consistency,
    ) -> Result<Var> {
        let i = g.constant(Tensor::new(vec![1, 1], vec![intensity])?);
        let ad = self.accent_variance_adaptor(g, text, speaker_id, accent_id, i, Regulation::Durations(durations))?;
        let mel = self.decode_mel(g, ad.frames)?;
        let input = match consistency {
            Consistency::Joint => mel,
            Consistency::Detached => {
                let copy = g.value(mel).clone();
                g.constant(copy)
            }
        };
        self.predict_intensity(g, input)
    }

    /// Eval-mode inference with predicted durations and prosody.
    pub fn synthesize(&self, req: &SynthesisRequest) -> Result<Synthesis> {
        req.validate(&self.config)?;
        let mut g = Graph::eval();
        let (mel, ad) = self.synthesize_on(&mut g, req)?;
        let durations = durations_of(&g, ad.log_duration_pred);
        let pitch_hz = g
            .value(ad.pitch_pred)
            .data()
            .iter()
            .map(|&z| self.prosody.pitch.denormalize(z))
            .collect();
        let energy = g
            .value(ad.energy_pred)
            .data()
            .iter()
            .map(|&z| self.prosody.energy.denormalize(z))
            .collect();
        Ok(Synthesis {
            mel: g.value(mel).clone(),
            durations,
            pitch_hz,
            energy,
        })
    }

    /// Builds the inference graph on `g`, returning the mel node.
    pub fn synthesize_on(&self, g: &mut Graph, req: &SynthesisRequest) -> Result<(Var, AdaptorOutput)> {
        req.validate(&self.config)?;
        let h_ph = self.encode_text(g, &req.phoneme_ids)?;
        let i = g.constant(Tensor::new(vec![1, 1], vec![req.intensity])?);
        let ad = self.accent_variance_adaptor(g, h_ph, req.speaker_id, req.accent_id, i, Regulation::Predicted)?;
        let mel = self.decode_mel(g, ad.frames)?;
        Ok((mel, ad))
    }

    /// Intensity predictor applied to a mel matrix, in eval mode.
    pub fn measure_intensity(&self, mel: &Tensor) -> Result<f64> {
        let mut g = Graph::eval();
        let m = g.constant(mel.clone());
        let i = self.predict_intensity(&mut g, m)?;
        Ok(g.value(i).item())
    }
}

pub fn durations_of(g: &Graph, log_duration: Var) -> Vec<usize> {
    g.value(log_duration)
        .data()
        .iter()
        .map(|&v| duration_from_log(v))
        .collect()
}

/// Composite training objective; `l_final` is the left-to-right sum of
/// the five components.
pub fn total_loss(
    g: &mut Graph,
    pred: &Predictions,
    targets: &LossTargets,
    intended_intensity: f64,
) -> Result<LossVars> {
    total_loss_with_probes(g, pred, targets, intended_intensity, &[])
}

/// As [`total_loss`], with `l_cc` averaged over the label term and each
/// `(predicted, intended)` probe.
pub fn total_loss_with_probes(
    g: &mut Graph,
    pred: &Predictions,
    targets: &LossTargets,
    intended_intensity: f64,
    probes: &[(Var, f64)],
) -> Result<LossVars> {
    let mel_gt = g.constant(targets.mel.clone());
    let l_mel = mse_loss(g, pred.mel, mel_gt)?;

    let log_d: Vec<f64> = targets.durations.iter().map(|&d| (1.0 + d as f64).ln()).collect();
    let dur_gt = g.constant(column(&log_d));
    let l_dur = mse_loss(g, pred.log_duration, dur_gt)?;

    let pitch_gt = g.constant(column(&targets.pitch));
    let l_p_pitch = mse_loss(g, pred.pitch, pitch_gt)?;
    let energy_gt = g.constant(column(&targets.energy));
    let l_p_energy = mse_loss(g, pred.energy, energy_gt)?;

    let i_gt = g.constant(Tensor::new(vec![1, 1], vec![intended_intensity])?);
    let mut l_cc = mse_loss(g, pred.intensity, i_gt)?;
    if !probes.is_empty() {
        for &(v, i) in probes {
            let t = g.constant(Tensor::new(vec![1, 1], vec![i])?);
            let term = mse_loss(g, v, t)?;
            l_cc = g.add(l_cc, term)?;
        }
        l_cc = g.scale(l_cc, 1.0 / (1 + probes.len()) as f64);
    }

    let s = g.add(l_mel, l_dur)?;
    let s = g.add(s, l_p_pitch)?;
    let s = g.add(s, l_p_energy)?;
    let l_final = g.add(s, l_cc)?;
    Ok(LossVars {
        l_mel,
        l_dur,
        l_p_pitch,
        l_p_energy,
        l_cc,
        l_final,
    })
}
