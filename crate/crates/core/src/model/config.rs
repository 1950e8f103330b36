use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_phonemes: usize,
    pub n_speakers: usize,
    pub n_accents: usize,
    pub n_fft_blocks: usize,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub conv_kernel: usize,
    /// Inner width of the feed-forward convolutions in each block.
    pub conv_filter: usize,
    pub accent_dim: usize,
    pub intensity_dim: usize,
    pub predictor_channels: usize,
    pub predictor_kernel: usize,
    pub upsample_kernel: usize,
    pub mel_dim: usize,
    pub dropout: f64,
    pub gru_hidden: usize,
}

impl ModelConfig {
    /// Full-size preset: 6 blocks of width 256, a 14×256 speaker table,
    /// a 6×128 accent table and a 128-wide intensity embedding.
    pub fn full() -> Self {
        ModelConfig {
            n_phonemes: crate::corpus::PHONEMES.len(),
            n_speakers: 14,
            n_accents: 6,
            n_fft_blocks: 6,
            hidden_dim: 256,
            n_heads: 2,
            conv_kernel: 3,
            conv_filter: 1024,
            accent_dim: 128,
            intensity_dim: 128,
            predictor_channels: 256,
            predictor_kernel: 3,
            upsample_kernel: 9,
            mel_dim: 80,
            dropout: 0.5,
            gru_hidden: 128,
        }
    }

    /// Small preset used for training on a desk.
    pub fn desk() -> Self {
        ModelConfig {
            n_phonemes: crate::corpus::PHONEMES.len(),
            n_speakers: 14,
            n_accents: 6,
            n_fft_blocks: 2,
            hidden_dim: 64,
            n_heads: 2,
            conv_kernel: 3,
            conv_filter: 128,
            accent_dim: 32,
            intensity_dim: 32,
            predictor_channels: 64,
            predictor_kernel: 3,
            upsample_kernel: 9,
            mel_dim: 80,
            dropout: 0.1,
            gru_hidden: 32,
        }
    }

    /// Tiny network for finite-difference checks.
    pub fn toy() -> Self {
        ModelConfig {
            n_phonemes: 6,
            n_speakers: 2,
            n_accents: 2,
            n_fft_blocks: 1,
            hidden_dim: 8,
            n_heads: 2,
            conv_kernel: 3,
            conv_filter: 8,
            accent_dim: 4,
            intensity_dim: 4,
            predictor_channels: 4,
            predictor_kernel: 3,
            upsample_kernel: 3,
            mel_dim: 6,
            dropout: 0.5,
            gru_hidden: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::ConfigError(m));
        if self.accent_dim + self.intensity_dim != self.hidden_dim {
            return err(format!(
                "accent_dim {} + intensity_dim {} must equal hidden_dim {}",
                self.accent_dim, self.intensity_dim, self.hidden_dim
            ));
        }
        if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return err(format!(
                "hidden_dim {} not divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            ));
        }
        for (name, k) in [
            ("conv_kernel", self.conv_kernel),
            ("predictor_kernel", self.predictor_kernel),
            ("upsample_kernel", self.upsample_kernel),
        ] {
            if k % 2 == 0 {
                return err(format!("{name} {k} must be odd"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        let positive = [
            ("n_phonemes", self.n_phonemes),
            ("n_speakers", self.n_speakers),
            ("n_accents", self.n_accents),
            ("hidden_dim", self.hidden_dim),
            ("conv_filter", self.conv_filter),
            ("accent_dim", self.accent_dim),
            ("intensity_dim", self.intensity_dim),
            ("predictor_channels", self.predictor_channels),
            ("mel_dim", self.mel_dim),
            ("gru_hidden", self.gru_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        for cfg in [ModelConfig::full(), ModelConfig::desk(), ModelConfig::toy()] {
            cfg.validate().unwrap();
        }
        let p = ModelConfig::full();
        assert_eq!(p.accent_dim + p.intensity_dim, 256);
        assert_eq!((p.n_speakers, p.hidden_dim), (14, 256));
        assert_eq!((p.n_accents, p.accent_dim), (6, 128));
        assert_eq!(p.n_fft_blocks, 6);
        assert_eq!(p.upsample_kernel, 9);
        assert_eq!(p.mel_dim, 80);
    }

    #[test]
    fn width_mismatch_rejected() {
        let cfg = ModelConfig {
            intensity_dim: 30,
            ..ModelConfig::desk()
        };
        assert!(matches!(cfg.validate(), Err(Error::ConfigError(_))));
    }
}
