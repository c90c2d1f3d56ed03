use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// A contiguous slice of the flat parameter vector sharing one
/// learning-rate multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub range: Range<usize>,
    pub multiplier: f64,
}

/// First and second moment estimates plus bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Applied updates so far.
    pub t: u64,
    /// Steps dropped because of a non-finite gradient.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            skipped: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Returns `false` (and bumps
/// `state.skipped`) when any gradient entry is non-finite.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    groups: &[ParamGroup],
) -> Result<bool> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::DimensionMismatch {
            left: format!("params[{n}]"),
            right: format!("grads[{}], state[{}]", grads.len(), state.m.len()),
        });
    }
    if let Some(g) = groups.iter().find(|g| g.range.end > n) {
        return Err(Error::Shape(format!("parameter group {:?} exceeds {n}", g.range)));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        log::warn!("non-finite gradient, skipping update ({} skipped so far)", state.skipped);
        return Ok(false);
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let mut lr = vec![cfg.lr; n];
    for g in groups {
        lr[g.range.clone()].iter_mut().for_each(|l| *l = cfg.lr * g.multiplier);
    }
    for i in 0..n {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr[i] * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(true)
}
