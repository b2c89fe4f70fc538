use serde::{Deserialize, Serialize};

use super::ForecasterParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay.
pub fn adam_step(
    params: &mut ForecasterParams,
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    debug_assert_eq!(params.len(), grad.len());
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    for (i, (theta, &g)) in params.theta.iter_mut().zip(grad).enumerate() {
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        *theta -= lr * (m_hat / (v_hat.sqrt() + EPSILON) + weight_decay * *theta);
    }
}

/// Plain gradient descent, used for sanity checks.
pub fn sgd_step(params: &mut ForecasterParams, grad: &[f64], lr: f64) {
    for (theta, g) in params.theta.iter_mut().zip(grad) {
        *theta -= lr * g;
    }
}

/// Step decay: `lr = initial · gamma^(window / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub gamma: f64,
    pub every: usize,
}

impl LrSchedule {
    pub fn at(&self, window: usize) -> f64 {
        self.initial * self.gamma.powi((window / self.every.max(1)) as i32)
    }
}
