use super::{
    sigmoid, softplus, BetaHeadOutput, HeadParams, PolicyParams, ACTION_DIM, FEATURE_DIM,
    HEAD_OUTPUTS, HIDDEN_DIM, PARAM_CAP, PARAM_FLOOR,
};
use crate::error::{Error, Result};

/// Intermediate values of one head, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    pub hidden: [f64; HIDDEN_DIM],
    pub raw: [f64; HEAD_OUTPUTS],
    pub params: [f64; HEAD_OUTPUTS],
}

#[derive(Clone, Debug)]
pub struct PolicyForward {
    pub features: [f64; FEATURE_DIM],
    pub output: BetaHeadOutput,
    pub rate: HeadTrace,
    pub fuse: HeadTrace,
}

fn head_forward(p: &HeadParams, f: &[f64; FEATURE_DIM], name: &str) -> Result<HeadTrace> {
    let mut hidden = [0.0; HIDDEN_DIM];
    for (j, h) in hidden.iter_mut().enumerate() {
        let row = &p.w1[j * FEATURE_DIM..(j + 1) * FEATURE_DIM];
        let pre = p.b1[j] + row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
        *h = pre.tanh();
    }
    let mut raw = [0.0; HEAD_OUTPUTS];
    let mut params = [0.0; HEAD_OUTPUTS];
    for k in 0..HEAD_OUTPUTS {
        let row = &p.w2[k * HIDDEN_DIM..(k + 1) * HIDDEN_DIM];
        raw[k] = p.b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        params[k] = softplus(raw[k]).clamp(PARAM_FLOOR, PARAM_CAP);
    }
    if !raw.iter().chain(&hidden).all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} head forward")));
    }
    Ok(HeadTrace {
        hidden,
        raw,
        params,
    })
}

fn head_backward(
    p: &HeadParams,
    trace: &HeadTrace,
    f: &[f64; FEATURE_DIM],
    d_params: [f64; HEAD_OUTPUTS],
    grad: &mut HeadParams,
) {
    let mut d_raw = [0.0; HEAD_OUTPUTS];
    for k in 0..HEAD_OUTPUTS {
        let sp = softplus(trace.raw[k]);
        // clamped outputs are flat in the raw value
        if (PARAM_FLOOR..=PARAM_CAP).contains(&sp) {
            d_raw[k] = d_params[k] * sigmoid(trace.raw[k]);
        }
    }
    let mut d_hidden = [0.0; HIDDEN_DIM];
    for k in 0..HEAD_OUTPUTS {
        grad.b2[k] += d_raw[k];
        for j in 0..HIDDEN_DIM {
            grad.w2[k * HIDDEN_DIM + j] += d_raw[k] * trace.hidden[j];
            d_hidden[j] += p.w2[k * HIDDEN_DIM + j] * d_raw[k];
        }
    }
    for j in 0..HIDDEN_DIM {
        let d_pre = d_hidden[j] * (1.0 - trace.hidden[j] * trace.hidden[j]);
        grad.b1[j] += d_pre;
        for i in 0..FEATURE_DIM {
            grad.w1[j * FEATURE_DIM + i] += d_pre * f[i];
        }
    }
}

/// Evaluates both heads. The rate head yields `(α_h, β_h, α_l, β_l)`, the
/// fuse head `(α_f, β_f, α_o, β_o)`.
pub fn policy_forward(params: &PolicyParams, features: &[f64; FEATURE_DIM]) -> Result<PolicyForward> {
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("policy feature {i}")));
    }
    let rate = head_forward(&params.rate, features, "rate")?;
    let fuse = head_forward(&params.fuse, features, "fuse")?;
    let output = BetaHeadOutput {
        alpha: [rate.params[0], rate.params[2], fuse.params[0], fuse.params[2]],
        beta: [rate.params[1], rate.params[3], fuse.params[1], fuse.params[3]],
    };
    Ok(PolicyForward {
        features: *features,
        output,
        rate,
        fuse,
    })
}

/// Chains upstream gradients with respect to `(α_k, β_k)` back to every
/// weight. Parameters sitting on their clamp bounds receive zero gradient.
pub fn policy_backward(
    params: &PolicyParams,
    fwd: &PolicyForward,
    d_alpha: [f64; ACTION_DIM],
    d_beta: [f64; ACTION_DIM],
) -> PolicyParams {
    let mut grad = PolicyParams::zeros();
    head_backward(
        &params.rate,
        &fwd.rate,
        &fwd.features,
        [d_alpha[0], d_beta[0], d_alpha[1], d_beta[1]],
        &mut grad.rate,
    );
    head_backward(
        &params.fuse,
        &fwd.fuse,
        &fwd.features,
        [d_alpha[2], d_beta[2], d_alpha[3], d_beta[3]],
        &mut grad.fuse,
    );
    grad
}
