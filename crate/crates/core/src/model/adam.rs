use serde::{Deserialize, Serialize};

use super::loss::ParamGrads;
use super::{ModelParams, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: ParamGrads,
    v: ParamGrads,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            step: 0,
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
        }
    }
}

/// One bias-corrected Adam update. Frozen groups, including their moment
/// estimates, are left untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for group in ParamGroup::ALL {
        if params.freeze.is_frozen(group) {
            continue;
        }
        let g = grads.get(group);
        let m = state.m.get_mut(group);
        let v = state.v.get_mut(group);
        let p = params.values_mut(group);
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}
