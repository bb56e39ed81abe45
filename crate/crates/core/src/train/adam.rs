use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidInput(format!("{name} {b} outside [0,1)")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidInput(format!("adam epsilon {} must be > 0", self.epsilon)));
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments, one instance per network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ModelParams<f32>,
    pub v: ModelParams<f32>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ModelParams<f32>) -> Self {
        Self {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>) {
        self.t += 1;
        let c = self.config;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let step = (c.learning_rate / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let (b1, b2, eps) = (c.beta1 as f32, c.beta2 as f32, c.epsilon as f32);
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        let mut moments = m_all.iter_mut().zip(v_all.iter_mut());
        for (name, p) in params.iter_mut() {
            let ((mn, m), (_, v)) = moments.next().expect("moments mirror the parameter set");
            debug_assert_eq!(mn, name);
            let Some(g) = grads.get(name) else { continue };
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}
