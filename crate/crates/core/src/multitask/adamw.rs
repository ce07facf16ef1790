//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::encoder::ModelParameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment state for one task. Weight decay applies to matrices only.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    m: ModelParameters,
    v: ModelParameters,
    t: u32,
}

impl AdamW {
    pub fn new(config: AdamWConfig, like: &ModelParameters) -> Self {
        Self {
            config,
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &ModelParameters, lr: f64) {
        self.t += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in tensors {
            let decay = if p.ndim() == 2 { weight_decay } else { 0.0 };
            let p = p.as_slice_mut().expect("standard layout");
            let g = g.as_slice().expect("standard layout");
            let m = m.as_slice_mut().expect("standard layout");
            let v = v.as_slice_mut().expect("standard layout");
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * p[i]);
            }
        }
    }
}
