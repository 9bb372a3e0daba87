//! Adam optimizer with bias correction.

use crate::error::{PtalError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(lr: f64, param_count: usize) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }
}

/// One Adam update, in place. Deterministic; rejects non-finite gradients.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(PtalError::Dimension(format!(
            "adam state holds {} moments, got {} params and {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(PtalError::Numeric("non-finite gradient in adam_step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let inv_bc1 = 1.0 / (1.0 - state.beta1.powi(t));
    let inv_bc2 = 1.0 / (1.0 - state.beta2.powi(t));
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    // Zipped slices so the loop vectorizes; sqrt and div dominate otherwise.
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = *g;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m * inv_bc1;
        let v_hat = *v * inv_bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
