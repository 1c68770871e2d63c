//! AdamW: Adam moments with weight decay applied directly to the parameters.
//!
//! ```text
//! p ← p − lr·λ·p
//! m ← β₁m + (1 − β₁)g          v ← β₂v + (1 − β₂)g²
//! p ← p − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments for one flat tensor, plus the shared step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamWState {
    pub fn zeros(len: usize) -> Self {
        AdamWState { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One AdamW update of `params` in place.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut AdamWState, cfg: &AdamWConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state has the wrong length");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()).zip(state.v.iter_mut()) {
        *p -= cfg.lr * cfg.weight_decay * *p;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// AdamW over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    states: Vec<AdamWState>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, tensor_lens: impl IntoIterator<Item = usize>) -> Self {
        AdamW { config, states: tensor_lens.into_iter().map(AdamWState::zeros).collect() }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), self.states.len());
        assert_eq!(grads.len(), self.states.len());
        for ((p, g), state) in params.into_iter().zip(grads).zip(self.states.iter_mut()) {
            adamw_step(p, g, state, &self.config);
        }
    }
}
