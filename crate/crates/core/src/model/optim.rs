use serde::{Deserialize, Serialize};

use super::autograd::Mat;
use super::params::ParameterBundle;

/// AdamW hyper-parameters (decoupled weight decay).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamWConfig {
    /// Fine-tuning setting used for pretrained-scale models.
    pub fn pretrained() -> Self {
        Self {
            lr: 5e-5,
            ..Self::default()
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParameterBundle) -> Self {
        let zeros = || params.tensors().iter().map(|t| Mat::zeros(t.raw_dim())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` is `None` for parameters that received
    /// no gradient.
    pub fn update(&mut self, params: &mut ParameterBundle, grads: &[Option<Mat>]) {
        let c = self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let norm = grads
                    .iter()
                    .flatten()
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i);
            if c.weight_decay > 0.0 {
                p.mapv_inplace(|x| x * (1.0 - c.lr * c.weight_decay));
            }
            let Some(g) = g else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * scale;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= c.lr * mh / (vh.sqrt() + c.eps);
            });
        }
    }
}
