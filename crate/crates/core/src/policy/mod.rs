//! Stochastic policy over the four restoration controls.
//!
//! Two small perceptron heads read an 8-dimensional pooled feature vector of
//! the degraded input. The *rate* head parameterizes the mask ratios
//! `(r_h, r_l)`; the *fuse* head parameterizes the fusion gains `(g_f, g_o)`.
//! Each head emits four positive scalars, i.e. one `(α, β)` pair per control.

mod beta;
mod features;
mod head;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use beta::{
    beta_ln_pdf, beta_sample, deterministic_action, entropy, entropy_grads, joint_logprob,
    logprob_grads, sample_action,
};
pub use features::{extract_features, Features, FEATURE_DIM, FEATURE_MAX};
pub use head::{policy_backward, policy_forward, HeadTrace, PolicyForward};

/// Lower clamp for every Beta shape parameter.
pub const PARAM_FLOOR: f64 = 1e-2;
/// Upper clamp for every Beta shape parameter.
pub const PARAM_CAP: f64 = 50.0;
/// Sampled actions are kept inside `[ACTION_EPS, 1 - ACTION_EPS]`.
pub const ACTION_EPS: f64 = 1e-4;
pub const HIDDEN_DIM: usize = 16;
/// Raw outputs per head: two `(α, β)` pairs.
pub const HEAD_OUTPUTS: usize = 4;
/// Number of controls in an [`Action`].
pub const ACTION_DIM: usize = 4;

/// The four controls `(r_h, r_l, g_f, g_o)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub r_h: f64,
    pub r_l: f64,
    pub g_f: f64,
    pub g_o: f64,
}

impl Action {
    /// Builds an action, clamping every component into the open unit
    /// interval.
    pub fn clamped(values: [f64; ACTION_DIM]) -> Self {
        let c = |v: f64| v.clamp(ACTION_EPS, 1.0 - ACTION_EPS);
        Self {
            r_h: c(values[0]),
            r_l: c(values[1]),
            g_f: c(values[2]),
            g_o: c(values[3]),
        }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.r_h, self.r_l, self.g_f, self.g_o]
    }
}

/// Per-control Beta shape parameters, ordered `h, l, f, o`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaHeadOutput {
    pub alpha: [f64; ACTION_DIM],
    pub beta: [f64; ACTION_DIM],
}

impl BetaHeadOutput {
    pub fn uniform() -> Self {
        Self {
            alpha: [1.0; ACTION_DIM],
            beta: [1.0; ACTION_DIM],
        }
    }
}

/// Weights of one head: `FEATURE_DIM → HIDDEN_DIM (tanh) → HEAD_OUTPUTS`.
/// Matrices are row-major with one row per output unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl HeadParams {
    pub const LEN: usize = HIDDEN_DIM * FEATURE_DIM + HIDDEN_DIM + HEAD_OUTPUTS * HIDDEN_DIM + HEAD_OUTPUTS;

    pub fn zeros() -> Self {
        Self {
            w1: vec![0.0; HIDDEN_DIM * FEATURE_DIM],
            b1: vec![0.0; HIDDEN_DIM],
            w2: vec![0.0; HEAD_OUTPUTS * HIDDEN_DIM],
            b2: vec![0.0; HEAD_OUTPUTS],
        }
    }

    /// Hidden weights uniform in `±1/√FEATURE_DIM`, zero output weights and
    /// an output bias that puts every shape parameter at 2.
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let bound = 1.0 / (FEATURE_DIM as f64).sqrt();
        let mut p = Self::zeros();
        p.w1.iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..bound));
        p.b2.iter_mut().for_each(|b| *b = softplus_inverse(2.0));
        p
    }

    fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn slices_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn check_shape(&self) -> bool {
        self.w1.len() == HIDDEN_DIM * FEATURE_DIM
            && self.b1.len() == HIDDEN_DIM
            && self.w2.len() == HEAD_OUTPUTS * HIDDEN_DIM
            && self.b2.len() == HEAD_OUTPUTS
    }
}

/// All trainable policy weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub rate: HeadParams,
    pub fuse: HeadParams,
}

impl PolicyParams {
    pub const LEN: usize = 2 * HeadParams::LEN;

    pub fn zeros() -> Self {
        Self {
            rate: HeadParams::zeros(),
            fuse: HeadParams::zeros(),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let rate = HeadParams::init(rng);
        let fuse = HeadParams::init(rng);
        Self { rate, fuse }
    }

    /// Flattens in the order rate(w1, b1, w2, b2), fuse(w1, b1, w2, b2).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::LEN);
        for head in [&self.rate, &self.fuse] {
            for s in head.slices() {
                out.extend_from_slice(s);
            }
        }
        out
    }

    pub fn from_slice(values: &[f64]) -> crate::Result<Self> {
        if values.len() != Self::LEN {
            return Err(crate::Error::Shape(format!(
                "policy vector has {} entries, expected {}",
                values.len(),
                Self::LEN
            )));
        }
        let mut p = Self::zeros();
        let mut offset = 0;
        for head in [&mut p.rate, &mut p.fuse] {
            for s in head.slices_mut() {
                let n = s.len();
                s.copy_from_slice(&values[offset..offset + n]);
                offset += n;
            }
        }
        Ok(p)
    }

    pub fn check_shape(&self) -> bool {
        self.rate.check_shape() && self.fuse.check_shape()
    }

    pub fn all_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotRole {
    Old,
    Reference,
}

/// Frozen copy of the policy weights.
#[derive(Clone, Debug)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    params: Arc<PolicyParams>,
}

impl PolicySnapshot {
    pub fn capture(params: &PolicyParams, role: SnapshotRole) -> Self {
        Self {
            role,
            params: Arc::new(params.clone()),
        }
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    y.exp_m1().ln()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
