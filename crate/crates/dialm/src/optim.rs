//! AdamW with decoupled weight decay.
//!
//! Moment buffers live here keyed by parameter name, so the optimizer can be
//! checkpointed and restored independently of the model. Decay multiplies the
//! weight directly (`θ ← θ·(1 − lr·wd)`) instead of entering the gradient,
//! and applies uniformly to every parameter the caller passes in.

use std::collections::BTreeMap;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

pub struct AdamW {
    pub cfg: AdamWConfig,
    t: u64,
    slots: BTreeMap<String, Slot>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, t: 0, slots: BTreeMap::new() }
    }

    /// Advances the shared step counter. Call once per batch, before the
    /// `update` calls for that batch.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one AdamW update to `theta` in place.
    pub fn update(&mut self, name: &str, theta: &mut [f32], grad: &[f32]) -> Result<()> {
        if self.t == 0 {
            return Err(Error::Contract("update before begin_step".into()));
        }
        if theta.len() != grad.len() {
            return Err(Error::Shape(format!(
                "{}: {} weights vs {} gradients",
                name,
                theta.len(),
                grad.len()
            )));
        }
        for &g in grad {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", name)));
            }
        }
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; theta.len()],
            v: vec![0.0; theta.len()],
        });
        if slot.m.len() != theta.len() {
            return Err(Error::Shape(format!(
                "{}: optimizer slot of {} elements vs {} weights",
                name,
                slot.m.len(),
                theta.len()
            )));
        }

        let lr = self.cfg.lr as f32;
        let b1 = self.cfg.beta1 as f32;
        let b2 = self.cfg.beta2 as f32;
        let eps = self.cfg.eps as f32;
        let decay = 1.0 - (self.cfg.lr * self.cfg.weight_decay) as f32;
        let bc1 = (1.0 - self.cfg.beta1.powi(self.t as i32)) as f32;
        let bc2 = (1.0 - self.cfg.beta2.powi(self.t as i32)) as f32;

        for i in 0..theta.len() {
            let g = grad[i];
            slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
            slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            theta[i] = theta[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn slots(&self) -> impl Iterator<Item = (&str, &Slot)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Replaces all state, e.g. when resuming from a checkpoint.
    pub fn restore(&mut self, t: u64, slots: BTreeMap<String, Slot>) {
        self.t = t;
        self.slots = slots;
    }
}
