//! AdamW with decoupled weight decay and bias-corrected moments.

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, Tensors};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Tensors,
    pub v: Tensors,
}

impl AdamWState {
    pub fn new(like: &Tensors) -> Self {
        Self {
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }
}

/// One AdamW update of a single tensor; `step` is the 1-based step count.
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &AdamWConfig,
    decay: bool,
) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let mut update = m_hat / (v_hat.sqrt() + cfg.eps);
        if decay {
            update += cfg.weight_decay * param[i];
        }
        param[i] -= cfg.lr * update;
    }
}

/// Updates every tensor; layer norms and biases are not decayed. Parameters
/// are rounded back to `f32` precision afterwards.
pub fn adamw_step(params: &mut EncoderParams, grads: &Tensors, state: &mut AdamWState, cfg: &AdamWConfig) {
    state.step += 1;
    let step = state.step;
    let tensors = params.tensors.named_mut();
    let grads = grads.named();
    let ms = state.m.named_mut();
    let vs = state.v.named_mut();
    for ((((_, kind, p), (_, _, g)), (_, _, m)), (_, _, v)) in tensors.into_iter().zip(grads).zip(ms).zip(vs) {
        adamw_update(p, g, m, v, step, cfg, kind.decays());
    }
    params.round_to_f32();
}

/// Scales `grads` in place so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Tensors, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
