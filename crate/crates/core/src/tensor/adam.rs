use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            base_lr: 2.0,
            beta1: 0.9,
            beta2: 0.998,
            epsilon: 1e-9,
            warmup_steps: 8000,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.warmup_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Adam with bias correction under an inverse-square-root warmup schedule.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub d_model: usize,
    /// Schedule position; may start above zero when resuming.
    pub step: u64,
    /// Updates made by this state, used for bias correction.
    updates: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, d_model: usize, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Ok(AdamState {
            config,
            d_model,
            step: 0,
            updates: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    /// `base_lr · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`
    pub fn learning_rate(&self, step: u64) -> f64 {
        let s = step.max(1) as f64;
        let w = self.config.warmup_steps as f64;
        self.config.base_lr * (self.d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
    }

    /// Applies one update to every trainable parameter, then zeroes all
    /// gradients.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (_, p) in params.iter() {
            if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.step += 1;
        self.updates += 1;
        let lr = self.learning_rate(self.step);
        let AdamConfig {
            beta1, beta2, epsilon, ..
        } = self.config;
        let t = self.updates.min(i32::MAX as u64) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = params.param_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let g = p.grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        params.zero_grads();
        Ok(())
    }
}
