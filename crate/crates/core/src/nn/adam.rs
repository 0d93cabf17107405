//! Adam optimizer over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::all_finite;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    /// One update in place. If any gradient entry is non-finite the update
    /// is rejected: params, moments, and step count are left untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state dim {} but params {} / grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !all_finite(grads) {
            return Err(Error::Numerical(
                "non-finite gradient; update rejected".to_string(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
        Ok(())
    }
}
