use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::{Action, BetaHeadOutput, ACTION_DIM, ACTION_EPS};
use crate::error::{Error, Result};
use crate::special::{digamma, ln_beta, trigamma};

/// Log-density of `Beta(alpha, beta)` at `a`.
pub fn beta_ln_pdf(a: f64, alpha: f64, beta: f64) -> f64 {
    (alpha - 1.0) * a.ln() + (beta - 1.0) * (-a).ln_1p() - ln_beta(alpha, beta)
}

/// Draws one Beta variate, clamped to `[ACTION_EPS, 1 - ACTION_EPS]`.
///
/// Uses Jöhnk's method when both shapes are below one (where gamma ratios
/// underflow) and the gamma-ratio construction otherwise.
pub fn beta_sample<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let v = if alpha < 1.0 && beta < 1.0 {
        loop {
            let lx = (1.0 - rng.random::<f64>()).ln() / alpha;
            let ly = (1.0 - rng.random::<f64>()).ln() / beta;
            let m = lx.max(ly);
            if m + ((lx - m).exp() + (ly - m).exp()).ln() <= 0.0 {
                break 1.0 / (1.0 + (ly - lx).exp());
            }
        }
    } else {
        let x = Gamma::new(alpha, 1.0).expect("positive shape").sample(rng);
        let y = Gamma::new(beta, 1.0).expect("positive shape").sample(rng);
        x / (x + y)
    };
    v.clamp(ACTION_EPS, 1.0 - ACTION_EPS)
}

/// Samples all four controls independently.
pub fn sample_action<R: Rng + ?Sized>(out: &BetaHeadOutput, rng: &mut R) -> Action {
    let v: [f64; ACTION_DIM] = std::array::from_fn(|k| beta_sample(out.alpha[k], out.beta[k], rng));
    Action::clamped(v)
}

/// Closed-form joint log-density of independent Beta controls.
pub fn joint_logprob(out: &BetaHeadOutput, a: &Action) -> Result<f64> {
    let a = a.to_array();
    let lp: f64 = (0..ACTION_DIM)
        .map(|k| beta_ln_pdf(a[k], out.alpha[k], out.beta[k]))
        .sum();
    if lp.is_finite() {
        Ok(lp)
    } else {
        Err(Error::NonFinite(format!("log-prob of {a:?} under {out:?}")))
    }
}

/// Differential entropy in nats, summed over the four controls.
pub fn entropy(out: &BetaHeadOutput) -> f64 {
    (0..ACTION_DIM)
        .map(|k| {
            let (a, b) = (out.alpha[k], out.beta[k]);
            ln_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b)
                + (a + b - 2.0) * digamma(a + b)
        })
        .sum()
}

/// `(∂ log π / ∂α_k, ∂ log π / ∂β_k)`.
pub fn logprob_grads(out: &BetaHeadOutput, a: &Action) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
    let a = a.to_array();
    let mut da = [0.0; ACTION_DIM];
    let mut db = [0.0; ACTION_DIM];
    for k in 0..ACTION_DIM {
        let psi_sum = digamma(out.alpha[k] + out.beta[k]);
        da[k] = a[k].ln() - digamma(out.alpha[k]) + psi_sum;
        db[k] = (-a[k]).ln_1p() - digamma(out.beta[k]) + psi_sum;
    }
    (da, db)
}

/// `(∂H / ∂α_k, ∂H / ∂β_k)`.
pub fn entropy_grads(out: &BetaHeadOutput) -> ([f64; ACTION_DIM], [f64; ACTION_DIM]) {
    let mut da = [0.0; ACTION_DIM];
    let mut db = [0.0; ACTION_DIM];
    for k in 0..ACTION_DIM {
        let (a, b) = (out.alpha[k], out.beta[k]);
        let tri_sum = (a + b - 2.0) * trigamma(a + b);
        da[k] = -(a - 1.0) * trigamma(a) + tri_sum;
        db[k] = -(b - 1.0) * trigamma(b) + tri_sum;
    }
    (da, db)
}

/// Beta means `α / (α + β)`.
pub fn deterministic_action(out: &BetaHeadOutput) -> Action {
    Action::clamped(std::array::from_fn(|k| {
        out.alpha[k] / (out.alpha[k] + out.beta[k])
    }))
}
