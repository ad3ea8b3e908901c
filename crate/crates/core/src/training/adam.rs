//! Adam with bias correction over the flattened mask coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one per mask coefficient, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new(num_coefficients: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_coefficients],
            v: vec![0.0; num_coefficients],
        }
    }

    pub fn for_mask(mask: &Mask) -> Self {
        Self::new(mask.num_coefficients())
    }
}

pub fn adam_step(
    mask: &mut Mask,
    grads: &[f64],
    state: &mut AdamState,
    params: &AdamParams,
) -> Result<()> {
    let n = mask.num_coefficients();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} coefficients, {} gradients, {}/{} moments",
            n,
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - params.beta1.powi(t);
    let correction2 = 1.0 - params.beta2.powi(t);
    let mut flat: Vec<f32> = mask.iter().collect();
    for (k, &g) in grads.iter().enumerate() {
        let m = params.beta1 * state.m[k] as f64 + (1.0 - params.beta1) * g;
        let v = params.beta2 * state.v[k] as f64 + (1.0 - params.beta2) * g * g;
        state.m[k] = m as f32;
        state.v[k] = v as f32;
        let m_hat = m / correction1;
        let v_hat = v / correction2;
        let update = params.learning_rate * m_hat / (v_hat.sqrt() + params.eps);
        flat[k] = (flat[k] as f64 - update) as f32;
    }
    mask.set_flat(&flat)
}
