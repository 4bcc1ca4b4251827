use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::Tensor;
use super::NumError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<ParamId, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: HashMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Update every parameter in `trainable`; each must have a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, trainable: &[ParamId]) -> Result<(), NumError> {
        for &id in trainable {
            if grads.get(id).is_none() {
                return Err(NumError::Contract(format!("no gradient for trainable parameter {}", store.name(id))));
            }
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for &id in trainable {
            let g = grads.get(id).expect("checked above");
            let p = store.get_mut(id);
            if g.shape() != p.shape() {
                return Err(NumError::Dimension {
                    op: "adam_step",
                    detail: format!("grad {:?} vs param {:?}", g.shape(), p.shape()),
                });
            }
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())));
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= c.lr * c.weight_decay * *w;
                *w -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
