use serde::{Deserialize, Serialize};

use super::DiffError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip applied before the moment update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(100.0),
        }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<f64, DiffError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(DiffError::Shape {
                op: "adam_step",
                detail: format!(
                    "optimizer sized for {}, params {}, grads {}",
                    self.first_moment.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(DiffError::NonFinite { op: "adam_step" });
        }
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = match self.config.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            ..
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i] * clip;
            self.first_moment[i] = b1 * self.first_moment[i] + (1.0 - b1) * g;
            self.second_moment[i] = b2 * self.second_moment[i] + (1.0 - b2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(norm)
    }
}
