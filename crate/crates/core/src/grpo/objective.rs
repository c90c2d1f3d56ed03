use super::train::RolloutGroup;
use super::TrainConfig;
use crate::backbone::{backbone_grads, restore_with_bands, split_bands, BackboneParams};
use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::policy::{
    entropy, entropy_grads, joint_logprob, logprob_grads, policy_backward, policy_forward, Action,
    PolicyForward, PolicyParams, ACTION_DIM,
};

/// Group-standardized rewards `(r_i − r̄) / sqrt(popvar + eps)`.
pub fn advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let s = (var + eps).sqrt();
    rewards.iter().map(|r| (r - mean) / s).collect()
}

/// Index of the highest reward; the lowest index wins ties.
pub fn best_index(rewards: &[f64]) -> usize {
    let mut best = 0;
    for (i, r) in rewards.iter().enumerate() {
        if *r > rewards[best] {
            best = i;
        }
    }
    best
}

/// `start + (end − start)·epoch/(total − 1)`, written as a convex blend so
/// both endpoints are hit exactly.
pub fn anneal(start: f64, end: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs <= 1 {
        return start;
    }
    let t = (epoch.min(total_epochs - 1)) as f64 / (total_epochs - 1) as f64;
    start * (1.0 - t) + end * t
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateTerms {
    pub value: f64,
    /// Derivative of `value` with respect to each current log-prob.
    pub d_logprob: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Share of candidates with `|ρ − 1| > ε`.
    pub clip_fraction: f64,
}

/// Clipped surrogate `(1/G)·Σ min(ρ_i A_i, clip(ρ_i, 1−ε, 1+ε)·A_i)` on
/// precomputed log-probs. The clipped branch carries no gradient.
pub fn surrogate_terms(logp: &[f64], logp_old: &[f64], adv: &[f64], clip_eps: f64) -> Result<SurrogateTerms> {
    let g = logp.len() as f64;
    let mut out = SurrogateTerms {
        value: 0.0,
        d_logprob: vec![0.0; logp.len()],
        ratios: Vec::with_capacity(logp.len()),
        clip_fraction: 0.0,
    };
    for i in 0..logp.len() {
        let rho = (logp[i] - logp_old[i]).exp();
        if !rho.is_finite() {
            return Err(Error::NonFinite(format!(
                "likelihood ratio of candidate {i} (logp {} vs old {})",
                logp[i], logp_old[i]
            )));
        }
        let unclipped = rho * adv[i];
        let clipped = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv[i];
        if unclipped <= clipped {
            out.value += unclipped / g;
            out.d_logprob[i] = unclipped / g;
        } else {
            out.value += clipped / g;
        }
        if (rho - 1.0).abs() > clip_eps {
            out.clip_fraction += 1.0 / g;
        }
        out.ratios.push(rho);
    }
    Ok(out)
}

/// `(1/G)·Σ ρ_i·(logp_i − logp_ref_i)` and its derivative in each `logp_i`.
pub fn kl_terms(logp: &[f64], logp_old: &[f64], logp_ref: &[f64]) -> (f64, Vec<f64>) {
    let g = logp.len() as f64;
    let mut value = 0.0;
    let mut d = vec![0.0; logp.len()];
    for i in 0..logp.len() {
        let rho = (logp[i] - logp_old[i]).exp();
        let diff = logp[i] - logp_ref[i];
        value += rho * diff / g;
        d[i] = rho * (diff + 1.0) / g;
    }
    (value, d)
}

fn group_logprobs(fwd: &PolicyForward, group: &RolloutGroup) -> Result<Vec<f64>> {
    group
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            joint_logprob(&fwd.output, &c.action).map_err(|e| {
                Error::NonFinite(format!("{e} (candidate {i} of {})", group.sample_id))
            })
        })
        .collect()
}

fn old_logprobs(group: &RolloutGroup) -> Vec<f64> {
    group.candidates.iter().map(|c| c.logprob_old).collect()
}

/// Chains per-candidate log-prob sensitivities (plus an optional entropy
/// weight) back to the policy weights.
fn chain_to_policy(
    policy: &PolicyParams,
    fwd: &PolicyForward,
    actions: &[Action],
    d_logprob: &[f64],
    d_entropy: f64,
) -> PolicyParams {
    let mut d_alpha = [0.0; ACTION_DIM];
    let mut d_beta = [0.0; ACTION_DIM];
    for (a, &w) in actions.iter().zip(d_logprob) {
        if w == 0.0 {
            continue;
        }
        let (da, db) = logprob_grads(&fwd.output, a);
        for k in 0..ACTION_DIM {
            d_alpha[k] += w * da[k];
            d_beta[k] += w * db[k];
        }
    }
    if d_entropy != 0.0 {
        let (da, db) = entropy_grads(&fwd.output);
        for k in 0..ACTION_DIM {
            d_alpha[k] += d_entropy * da[k];
            d_beta[k] += d_entropy * db[k];
        }
    }
    policy_backward(policy, fwd, d_alpha, d_beta)
}

fn actions(group: &RolloutGroup) -> Vec<Action> {
    group.candidates.iter().map(|c| c.action).collect()
}

/// Clipped surrogate of a group under `policy` and its policy gradient.
pub fn surrogate(group: &RolloutGroup, policy: &PolicyParams, clip_eps: f64) -> Result<(SurrogateTerms, PolicyParams)> {
    let fwd = policy_forward(policy, &group.features)?;
    let lp = group_logprobs(&fwd, group)?;
    let terms = surrogate_terms(&lp, &old_logprobs(group), &group.advantages, clip_eps)?;
    let grad = chain_to_policy(policy, &fwd, &actions(group), &terms.d_logprob, 0.0);
    Ok((terms, grad))
}

/// Ratio-weighted sample estimate of `KL(π_θ ‖ π_ref)` on the group.
pub fn kl_estimate(group: &RolloutGroup, policy: &PolicyParams, reference: &PolicyParams) -> Result<f64> {
    let lp = group_logprobs(&policy_forward(policy, &group.features)?, group)?;
    let lp_ref = group_logprobs(&policy_forward(reference, &group.features)?, group)?;
    Ok(kl_terms(&lp, &old_logprobs(group), &lp_ref).0)
}

#[derive(Clone, Debug)]
pub struct RlLoss {
    /// `−surrogate + β·KL − τ·H`.
    pub value: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad: PolicyParams,
}

pub fn rl_loss(
    group: &RolloutGroup,
    policy: &PolicyParams,
    reference: &PolicyParams,
    cfg: &TrainConfig,
) -> Result<RlLoss> {
    let fwd = policy_forward(policy, &group.features)?;
    let lp = group_logprobs(&fwd, group)?;
    let lp_old = old_logprobs(group);
    let lp_ref = group_logprobs(&policy_forward(reference, &group.features)?, group)?;
    let surr = surrogate_terms(&lp, &lp_old, &group.advantages, cfg.clip_eps)?;
    let (kl, d_kl) = kl_terms(&lp, &lp_old, &lp_ref);
    let h = entropy(&fwd.output);
    let d_logprob: Vec<f64> = surr
        .d_logprob
        .iter()
        .zip(&d_kl)
        .map(|(s, k)| -s + cfg.kl_weight * k)
        .collect();
    let grad = chain_to_policy(policy, &fwd, &actions(group), &d_logprob, -cfg.entropy_weight);
    Ok(RlLoss {
        value: -surr.value + cfg.kl_weight * kl - cfg.entropy_weight * h,
        surrogate: surr.value,
        kl,
        entropy: h,
        clip_fraction: surr.clip_fraction,
        grad,
    })
}

const L1_SMOOTHING: f64 = 1e-8;

/// `sqrt(d² + δ²) − δ`: zero at zero, `|d|` to within `δ` elsewhere, and
/// differentiable everywhere.
pub fn smooth_l1(d: f64) -> (f64, f64) {
    let r = (d * d + L1_SMOOTHING * L1_SMOOTHING).sqrt();
    (r - L1_SMOOTHING, d / r)
}

fn mean_l1(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    a.check_same_shape(b)?;
    let n = a.data().len() as f64;
    let mut value = 0.0;
    let mut upstream = Vec::with_capacity(a.data().len());
    for (x, y) in a.data().iter().zip(b.data()) {
        let (v, d) = smooth_l1(x - y);
        value += v / n;
        upstream.push(d / n);
    }
    Ok((value, upstream))
}

#[derive(Clone, Debug)]
pub struct SupLosses {
    /// `mean|y_{g*} − ŷ|`.
    pub sup: f64,
    /// `mean|y_{g*} − y_det|` with `y_{g*}` held fixed.
    pub cons: f64,
    pub grad_sup: BackboneParams,
    pub grad_cons: BackboneParams,
}

/// Supervised and consistency losses of a group. `y_{g*}` is recomputed
/// under `backbone` for the supervised term; the consistency target is the
/// stored rollout output of the best candidate.
pub fn sup_losses(group: &RolloutGroup, backbone: &BackboneParams, truth: &Image) -> Result<SupLosses> {
    let x = &group.input;
    let best = &group.candidates[group.best];
    let best_bands = split_bands(x, best.action.r_h, best.action.r_l)?;
    let y_best = restore_with_bands(x, &best_bands, &best.action, backbone)?;
    let (sup, up_sup) = mean_l1(&y_best, truth)?;
    let grad_sup = backbone_grads(x, &best_bands, &best.action, &up_sup)?;

    let det = group.det_action;
    let det_bands = split_bands(x, det.r_h, det.r_l)?;
    let y_det = restore_with_bands(x, &det_bands, &det, backbone)?;
    let (cons, up_cons) = mean_l1(&y_det, &best.output)?;
    let grad_cons = backbone_grads(x, &det_bands, &det, &up_cons)?;
    Ok(SupLosses {
        sup,
        cons,
        grad_sup,
        grad_cons,
    })
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: f64,
    pub rl: RlLoss,
    pub sup: f64,
    pub cons: f64,
    pub lambda_sup: f64,
    pub lambda_cons: f64,
    pub policy_grad: PolicyParams,
    pub backbone_grad: BackboneParams,
}

/// `L_RL + λ_sup·L_sup + λ_cons·L_cons` with the epoch's annealed weights.
pub fn total_loss(
    group: &RolloutGroup,
    truth: &Image,
    policy: &PolicyParams,
    backbone: &BackboneParams,
    reference: &PolicyParams,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    let rl = rl_loss(group, policy, reference, cfg)?;
    let s = sup_losses(group, backbone, truth)?;
    let (ls, lc) = (cfg.lambda_sup(epoch), cfg.lambda_cons(epoch));
    let backbone_grad = BackboneParams::from_slice(
        &s.grad_sup
            .to_vec()
            .iter()
            .zip(s.grad_cons.to_vec())
            .map(|(a, b)| ls * a + lc * b)
            .collect::<Vec<_>>(),
    )?;
    Ok(LossBreakdown {
        total: rl.value + ls * s.sup + lc * s.cons,
        policy_grad: rl.grad.clone(),
        rl,
        sup: s.sup,
        cons: s.cons,
        lambda_sup: ls,
        lambda_cons: lc,
        backbone_grad,
    })
}
