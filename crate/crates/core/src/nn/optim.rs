use serde::{Deserialize, Serialize};

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers live in `f64` regardless of the
/// parameter type.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Adam {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter size mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient/parameter size mismatch");
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = g.to_f64();
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let update = c.lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            *p = T::from_f64(p.to_f64() - update);
        }
    }
}
