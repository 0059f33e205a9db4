use serde::{Deserialize, Serialize};

use super::params::MaskNetParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm the gradient is rescaled to before each step, if larger.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// First and second moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` along `grads`, each given
    /// as slices that concatenate to this state's length.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut [f64]>,
        grads: &[&[f64]],
        cfg: &AdamConfig,
    ) {
        let norm = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum::<f64>().sqrt();
        let scale = match cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let mut off = 0;
        for (p, g) in params.into_iter().zip(grads) {
            for (k, (pk, &gk)) in p.iter_mut().zip(g.iter()).enumerate() {
                let gk = gk * scale;
                let i = off + k;
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * gk;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *pk -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            off += g.len();
        }
        debug_assert_eq!(off, self.m.len());
    }
}

/// Clips `grads` to the configured global norm and applies one Adam step.
pub fn adam_step(params: &mut MaskNetParams, grads: &MaskNetParams, state: &mut AdamState, cfg: &AdamConfig) {
    let g: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    state.update(params.tensors_mut(), &g, cfg);
}
