use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Inverse-square-root schedule with linear warmup:
/// `scale · d^-½ · min(step^-½, step · warmup^-1.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoamSchedule {
    pub model_dim: usize,
    pub warmup_steps: usize,
    pub scale: f64,
}

impl NoamSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.scale * (self.model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one bias-corrected update. `grads[id]` must match parameter `id`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::ShapeError(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::ShapeError(format!("gradient {id} has wrong length")));
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn schedule_peaks_at_warmup() {
        let s = NoamSchedule {
            model_dim: 64,
            warmup_steps: 100,
            scale: 1.0,
        };
        assert!(s.lr(50) < s.lr(100));
        assert!(s.lr(200) < s.lr(100));
        assert!((s.lr(100) - 64f64.powf(-0.5) * 0.1).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![3.0, -2.0])).unwrap();
        let mut opt = Adam::new(&p, AdamConfig::default());
        for _ in 0..2000 {
            let g: Vec<f64> = p.tensor(0).data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[g], 0.01).unwrap();
        }
        assert!(p.tensor(0).data().iter().all(|x| x.abs() < 1e-2));
    }
}
