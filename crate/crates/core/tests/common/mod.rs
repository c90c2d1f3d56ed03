#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use restorl::backbone::{backbone_grads, restore, restore_with_bands, split_bands, BackboneParams};
use restorl::data::Sample;
use restorl::grpo::{group_rollout, smooth_l1, total_loss, RolloutGroup, TrainConfig};
use restorl::policy::{
    entropy, entropy_grads, joint_logprob, logprob_grads, policy_backward, policy_forward, Action,
    BetaHeadOutput, PolicyParams, PolicySnapshot, SnapshotRole, ACTION_DIM, FEATURE_DIM,
};
use restorl::rewards::{DegradationKind, RewardModel};
use restorl::Image;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(h: usize, w: usize, rng: &mut impl Rng) -> Image {
    Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>()).unwrap()
}

/// Initialized heads with every weight active.
pub fn random_policy(rng: &mut impl Rng) -> PolicyParams {
    let mut p = PolicyParams::init(rng);
    for head in [&mut p.rate, &mut p.fuse] {
        head.w2.iter_mut().for_each(|w| *w = rng.random_range(-0.4..0.4));
        head.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        head.b2.iter_mut().for_each(|b| *b += rng.random_range(-0.5..0.5));
    }
    p
}

pub fn perturbed(p: &PolicyParams, scale: f64, rng: &mut impl Rng) -> PolicyParams {
    let v: Vec<f64> = p.to_vec().iter().map(|w| w + scale * rng.random_range(-1.0..1.0)).collect();
    PolicyParams::from_slice(&v).unwrap()
}

pub fn random_backbone(rng: &mut impl Rng) -> BackboneParams {
    let mut gen = |lo: f64, hi: f64| (0..3).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
    BackboneParams {
        w_low: gen(0.5, 1.5),
        w_high: gen(-0.5, 1.5),
        scale: gen(0.5, 1.5),
        bias: gen(-0.1, 0.1),
    }
}

/// A group sampled from a perturbed "old" policy, so ratios differ from 1.
pub struct FrozenInstance {
    pub group: RolloutGroup,
    pub truth: Image,
    pub policy: PolicyParams,
    pub reference: PolicyParams,
    pub backbone: BackboneParams,
}

pub fn frozen_instance(seed: u64, size: usize, g: usize) -> FrozenInstance {
    let mut r = rng(seed);
    let truth = random_image(size, size, &mut r);
    let degraded = truth.map(|v| (v + 0.2 * (v * 17.0).sin()).clamp(0.0, 1.0));
    let policy = random_policy(&mut r);
    let old = perturbed(&policy, 0.05, &mut r);
    let reference = perturbed(&policy, 0.1, &mut r);
    let backbone = random_backbone(&mut r);
    let sample = Sample {
        id: format!("fd-{seed}"),
        kind: DegradationKind::Denoise { sigma: 25 },
        degraded,
        truth: truth.clone(),
    };
    let snap = PolicySnapshot::capture(&old, SnapshotRole::Old);
    let group = group_rollout(&sample, &snap, &backbone, &RewardModel::with_mock_judge(), g, 1e-8, &mut r).unwrap();
    FrozenInstance {
        group,
        truth,
        policy,
        reference,
        backbone,
    }
}

/// Central differences of `f` at `x`, compared entry-wise with `analytic`:
/// `|a − n| ≤ rtol·max(|a|, |n|) + atol`.
pub fn fd_check(
    analytic: &[f64],
    x: &[f64],
    h: f64,
    rtol: f64,
    atol: f64,
    f: impl Fn(&[f64]) -> f64,
) -> Result<(), String> {
    assert_eq!(analytic.len(), x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let num = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        if (a - num).abs() > rtol * a.abs().max(num.abs()) + atol {
            return Err(format!("entry {i}: analytic {a:e} vs numeric {num:e}"));
        }
    }
    Ok(())
}

pub fn random_beta(rng: &mut impl Rng) -> BetaHeadOutput {
    BetaHeadOutput {
        alpha: std::array::from_fn(|_| rng.random_range(0.3..8.0)),
        beta: std::array::from_fn(|_| rng.random_range(0.3..8.0)),
    }
}

fn from_shape_vec(v: &[f64]) -> BetaHeadOutput {
    BetaHeadOutput {
        alpha: std::array::from_fn(|k| v[k]),
        beta: std::array::from_fn(|k| v[ACTION_DIM + k]),
    }
}

fn shape_vec(out: &BetaHeadOutput) -> Vec<f64> {
    out.alpha.iter().chain(&out.beta).copied().collect()
}

fn tagged(seed: u64, r: Result<(), String>) -> Result<(), String> {
    r.map_err(|e| format!("instance {seed}: {e}"))
}

/// d log π / d(α, β), rtol 1e-4.
pub fn check_logprob_grads(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut r = rng(seed);
        let out = random_beta(&mut r);
        let a = Action::clamped(std::array::from_fn(|_| r.random_range(0.02..0.98)));
        let (da, db) = logprob_grads(&out, &a);
        let analytic: Vec<f64> = da.iter().chain(&db).copied().collect();
        tagged(
            seed,
            fd_check(&analytic, &shape_vec(&out), 1e-6, 1e-4, 1e-9, |v| {
                joint_logprob(&from_shape_vec(v), &a).unwrap()
            }),
        )?;
    }
    Ok(())
}

/// dH / d(α, β), rtol 1e-3.
pub fn check_entropy_grads(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut r = rng(100 + seed);
        let out = random_beta(&mut r);
        let (da, db) = entropy_grads(&out);
        let analytic: Vec<f64> = da.iter().chain(&db).copied().collect();
        tagged(
            seed,
            fd_check(&analytic, &shape_vec(&out), 1e-6, 1e-3, 1e-9, |v| entropy(&from_shape_vec(v))),
        )?;
    }
    Ok(())
}

/// Backward pass of both heads for a random linear functional of `(α, β)`.
pub fn check_policy_chain(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut r = rng(200 + seed);
        let params = random_policy(&mut r);
        let features: [f64; FEATURE_DIM] = std::array::from_fn(|_| r.random_range(0.0..2.0));
        let ca: [f64; ACTION_DIM] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let cb: [f64; ACTION_DIM] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let objective = |p: &PolicyParams| {
            let o = policy_forward(p, &features).unwrap().output;
            (0..ACTION_DIM).map(|k| ca[k] * o.alpha[k] + cb[k] * o.beta[k]).sum::<f64>()
        };
        let fwd = policy_forward(&params, &features).unwrap();
        let grad = policy_backward(&params, &fwd, ca, cb).to_vec();
        tagged(
            seed,
            fd_check(&grad, &params.to_vec(), 1e-6, 1e-3, 1e-8, |v| {
                objective(&PolicyParams::from_slice(v).unwrap())
            }),
        )?;
    }
    Ok(())
}

/// Backbone parameters under the mean smooth-ℓ1 loss on an 8×8 image.
pub fn check_backbone_l1(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut r = rng(300 + seed);
        let x = random_image(8, 8, &mut r);
        let t = random_image(8, 8, &mut r);
        let a = Action::clamped(std::array::from_fn(|_| r.random_range(0.05..0.95)));
        let p = random_backbone(&mut r);
        let n = x.data().len() as f64;
        let loss = |p: &BackboneParams| {
            let y = restore(&x, &a, p).unwrap();
            y.data().iter().zip(t.data()).map(|(u, v)| smooth_l1(u - v).0).sum::<f64>() / n
        };
        let bands = split_bands(&x, a.r_h, a.r_l).unwrap();
        let y = restore_with_bands(&x, &bands, &a, &p).unwrap();
        let upstream: Vec<f64> = y.data().iter().zip(t.data()).map(|(u, v)| smooth_l1(u - v).1 / n).collect();
        let grad = backbone_grads(&x, &bands, &a, &upstream).unwrap().to_vec();
        tagged(
            seed,
            fd_check(&grad, &p.to_vec(), 1e-5, 1e-3, 1e-8, |v| {
                loss(&BackboneParams::from_slice(v).unwrap())
            }),
        )?;
    }
    Ok(())
}

/// The assembled loss over the concatenated policy and backbone vector, on
/// frozen 8×8 groups of two sampled from a perturbed old policy.
pub fn check_total_loss(instances: u64) -> Result<(), String> {
    let cfg = TrainConfig::default();
    let np = PolicyParams::LEN;
    for seed in 0..instances {
        let inst = frozen_instance(400 + seed, 8, 2);
        let epoch = seed as usize % cfg.epochs;
        let eval = |v: &[f64]| {
            let p = PolicyParams::from_slice(&v[..np]).unwrap();
            let b = BackboneParams::from_slice(&v[np..]).unwrap();
            total_loss(&inst.group, &inst.truth, &p, &b, &inst.reference, &cfg, epoch).unwrap().total
        };
        let lb = total_loss(&inst.group, &inst.truth, &inst.policy, &inst.backbone, &inst.reference, &cfg, epoch)
            .map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = lb.policy_grad.to_vec().into_iter().chain(lb.backbone_grad.to_vec()).collect();
        let x: Vec<f64> = inst.policy.to_vec().into_iter().chain(inst.backbone.to_vec()).collect();
        tagged(seed, fd_check(&analytic, &x, 1e-6, 1e-3, 1e-8, eval))?;
    }
    Ok(())
}

/// Outcome of the desk-scale pipeline: synthesize, mine, train.
pub struct SmokeRun {
    pub hard: Vec<Sample>,
    /// Monte-Carlo mean combined reward of the initial and trained policy.
    pub reward_before: f64,
    pub reward_after: f64,
    /// Epoch means of the total loss.
    pub epoch_loss: Vec<f64>,
    pub outcome: restorl::grpo::TrainOutcome,
}

pub fn smoke_run(cfg: &restorl::config::RunConfig) -> SmokeRun {
    use restorl::data::{baseline_reward, mine_hard, synth_samples, SampleRecord};
    use restorl::grpo::{epoch_summaries, expected_reward, init_model, train};
    use restorl::judge::MockJudge;
    use restorl::rewards::ScorerRegistry;

    let rewards = RewardModel::new(cfg.reward_weights(), ScorerRegistry::default(), Box::new(MockJudge)).unwrap();
    let samples = synth_samples(cfg.per_kind, cfg.size, cfg.seed, &cfg.degradations()).unwrap();
    let (policy, backbone) = init_model(cfg.seed);
    let records = samples
        .iter()
        .map(|s| SampleRecord {
            id: s.id.clone(),
            kind: s.kind,
            degraded: Default::default(),
            truth: Default::default(),
            baseline_reward: Some(baseline_reward(s, &backbone, &policy, &rewards)),
            selected: false,
        })
        .collect();
    let manifest = mine_hard(records, cfg.hard_ratio, cfg.mining_mode, cfg.seed).unwrap();
    let hard: Vec<Sample> = samples
        .into_iter()
        .zip(&manifest.records)
        .filter(|(_, r)| r.selected)
        .map(|(s, _)| s)
        .collect();
    let tc = cfg.train_config();
    let reward_before = expected_reward(&hard, &policy, &backbone, &rewards, cfg.eval_draws, cfg.seed).unwrap();
    let outcome = train(&hard, &tc, &rewards, None, &mut |_| Ok(()), &mut |_| Ok(())).unwrap();
    let ck = &outcome.checkpoint;
    let reward_after = expected_reward(&hard, &ck.policy, &ck.backbone, &rewards, cfg.eval_draws, cfg.seed).unwrap();
    let epoch_loss = epoch_summaries(&outcome.metrics)
        .unwrap()
        .iter()
        .map(|s| s.mean.total_loss)
        .collect();
    SmokeRun {
        hard,
        reward_before,
        reward_after,
        epoch_loss,
        outcome,
    }
}

/// Minimal HTTP server answering every POST with `body`. Returns the base
/// URL and the request bodies it has received.
pub fn stub_server(body: &'static str) -> (String, std::sync::Arc<std::sync::Mutex<Vec<String>>>) {
    use std::io::{BufRead, BufReader, Read, Write};
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/judge", listener.local_addr().unwrap());
    let seen = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
    let log = seen.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut buf = vec![0u8; len];
            let _ = reader.read_exact(&mut buf);
            log.lock().unwrap().push(String::from_utf8_lossy(&buf).into_owned());
            let reply = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (url, seen)
}

/// A listener that accepts connections and never answers.
pub fn silent_server() -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/judge", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        let mut held = Vec::new();
        for stream in listener.incoming().flatten() {
            held.push(stream);
        }
    });
    url
}
