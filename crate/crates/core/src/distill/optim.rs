//! AdamW with decoupled weight decay and a warm-up + cosine schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warm-up length in optimizer steps.
    pub warmup_steps: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_grad: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 2e-3,
            min_lr: 1e-5,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 10,
            clip_grad: Some(5.0),
        }
    }
}

impl OptimConfig {
    /// Learning rate of step `step` (0-based) out of `total`.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let t = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.lr - self.min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(config: OptimConfig, dim: usize) -> Self {
        AdamW {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One update at learning rate `lr`. `decays[i]` selects the entries
    /// that receive weight decay.
    pub fn step(&mut self, theta: &mut [f64], grad: &mut [f64], decays: &[bool], lr: f64) {
        let c = self.config;
        if let Some(max) = c.clip_grad {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                let s = max / (norm + 1e-6);
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            if decays[i] {
                theta[i] *= 1.0 - lr * c.weight_decay;
            }
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + c.eps);
        }
    }
}
