use std::fs::{self, File};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, ParamGroup};
use super::objective::{advantages, best_index, total_loss, LossBreakdown};
use super::{init_model, TrainConfig};
use crate::backbone::{restore, BackboneParams, Candidate};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::policy::{
    deterministic_action, extract_features, joint_logprob, policy_forward, sample_action, Action,
    Features, PolicyParams, PolicySnapshot, SnapshotRole,
};
use crate::rewards::{DegradationKind, RewardModel};

pub const CHECKPOINT_VERSION: u32 = 1;

pub const METRICS_HEADER: &str =
    "step,epoch,total_loss,rl_loss,sup_loss,cons_loss,reward_mean,reward_std,kl,entropy,clip_frac";

/// `G` scored candidates for one input.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub sample_id: String,
    pub kind: DegradationKind,
    pub input: Image,
    pub features: Features,
    pub candidates: Vec<Candidate>,
    pub advantages: Vec<f64>,
    /// Highest-reward candidate, lowest index on ties.
    pub best: usize,
    /// Beta-mean action of the sampling snapshot.
    pub det_action: Action,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.reward.combined).collect()
    }
}

/// Samples `g` actions from the `old` snapshot, restores and scores each.
pub fn group_rollout<R: Rng + ?Sized>(
    sample: &Sample,
    old: &PolicySnapshot,
    backbone: &BackboneParams,
    rewards: &RewardModel,
    g: usize,
    adv_eps: f64,
    rng: &mut R,
) -> Result<RolloutGroup> {
    if g < 2 {
        return Err(Error::Config(format!("group size {g} < 2")));
    }
    let x = &sample.degraded;
    let features = extract_features(x);
    let fwd = policy_forward(old.params(), &features)?;
    let mut candidates = Vec::with_capacity(g);
    for i in 0..g {
        let action = sample_action(&fwd.output, rng);
        let output = restore(x, &action, backbone)?;
        let clamped = output.clamped();
        let logprob_old = joint_logprob(&fwd.output, &action)?;
        let reward = rewards
            .score(sample.kind, x, &clamped, &sample.truth)
            .map_err(|e| Error::TrainingAborted {
                sample_id: sample.id.clone(),
                reason: format!("reward of candidate {i}: {e}"),
            })?;
        candidates.push(Candidate {
            action,
            output,
            clamped,
            logprob_old,
            reward,
        });
    }
    let r: Vec<f64> = candidates.iter().map(|c| c.reward.combined).collect();
    Ok(RolloutGroup {
        sample_id: sample.id.clone(),
        kind: sample.kind,
        input: x.clone(),
        features,
        advantages: advantages(&r, adv_eps),
        best: best_index(&r),
        candidates,
        det_action: deterministic_action(&fwd.output),
    })
}

/// Random `patch`-sized crop (whole image when smaller) with random
/// horizontal and vertical flips, applied identically to input and truth.
pub fn prepare_input<R: Rng + ?Sized>(sample: &Sample, patch: usize, rng: &mut R) -> Result<Sample> {
    let (h, w) = (sample.degraded.height(), sample.degraded.width());
    let (ph, pw) = (patch.min(h), patch.min(w));
    let top = rng.random_range(0..=h - ph);
    let left = rng.random_range(0..=w - pw);
    let (flip_h, flip_v) = (rng.random_bool(0.5), rng.random_bool(0.5));
    let apply = |img: &Image| -> Result<Image> {
        let mut out = img.crop(top, left, ph, pw)?;
        if flip_h {
            out = out.flip_horizontal();
        }
        if flip_v {
            out = out.flip_vertical();
        }
        Ok(out)
    };
    Ok(Sample {
        id: sample.id.clone(),
        kind: sample.kind,
        degraded: apply(&sample.degraded)?,
        truth: apply(&sample.truth)?,
    })
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub total_loss: f64,
    pub rl_loss: f64,
    pub sup_loss: f64,
    pub cons_loss: f64,
    pub reward_mean: f64,
    /// Population standard deviation of the group rewards.
    pub reward_std: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

impl StepMetrics {
    fn from_loss(step: u64, epoch: usize, loss: &LossBreakdown, rewards: &[f64]) -> Self {
        let g = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / g;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
        Self {
            step,
            epoch,
            total_loss: loss.total,
            rl_loss: loss.rl.value,
            sup_loss: loss.sup,
            cons_loss: loss.cons,
            reward_mean: mean,
            reward_std: var.sqrt(),
            kl: loss.rl.kl,
            entropy: loss.rl.entropy,
            clip_frac: loss.rl.clip_fraction,
        }
    }

    /// Reads a metrics log, checking the header.
    pub fn read_csv(path: &Path) -> Result<Vec<Self>> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Metrics(e.to_string()))?;
        let header = rdr
            .headers()
            .map_err(|e| Error::Metrics(e.to_string()))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if header != METRICS_HEADER {
            return Err(Error::Metrics(format!("unexpected header `{header}`")));
        }
        rdr.deserialize()
            .map(|row| row.map_err(|e| Error::Metrics(e.to_string())))
            .collect()
    }
}

/// Append-only CSV sink, flushed after every row.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Metrics(e.to_string()))?;
        inner
            .write_record(METRICS_HEADER.split(','))
            .map_err(|e| Error::Metrics(e.to_string()))?;
        inner.flush()?;
        Ok(Self { inner })
    }

    /// Opens an existing log for appending; creates it when missing.
    pub fn append_to(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let file = fs::OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        self.inner.serialize(m).map_err(|e| Error::Metrics(e.to_string()))?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Full trainer state, written after every epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub policy_len: usize,
    pub backbone_channels: usize,
    pub policy: PolicyParams,
    pub backbone: BackboneParams,
    /// Frozen KL reference.
    pub reference: PolicyParams,
    pub adam: AdamState,
    pub config_hash: String,
    pub config: TrainConfig,
    /// Optimization steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    /// Untrained state for `cfg`.
    pub fn initial(cfg: &TrainConfig) -> Self {
        let (policy, backbone) = init_model(cfg.seed);
        let n = PolicyParams::LEN + backbone.len();
        Self {
            version: CHECKPOINT_VERSION,
            policy_len: PolicyParams::LEN,
            backbone_channels: backbone.channels(),
            reference: policy.clone(),
            policy,
            backbone,
            adam: AdamState::new(n),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            step: 0,
            epoch: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let n = PolicyParams::LEN + self.backbone.len();
        let shapes_ok = self.policy_len == PolicyParams::LEN
            && self.policy.check_shape()
            && self.reference.check_shape()
            && self.backbone_channels == self.backbone.channels()
            && [&self.backbone.w_high, &self.backbone.scale, &self.backbone.bias]
                .iter()
                .all(|v| v.len() == self.backbone_channels)
            && self.adam.m.len() == n
            && self.adam.v.len() == n;
        if !shapes_ok {
            return Err(Error::Checkpoint("parameter shapes do not match header".into()));
        }
        if self.config_hash != self.config.hash() {
            return Err(Error::Checkpoint("config hash does not match stored config".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Self =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut v = self.policy.to_vec();
        v.extend(self.backbone.to_vec());
        v
    }

    fn set_flat_params(&mut self, v: &[f64]) -> Result<()> {
        self.policy = PolicyParams::from_slice(&v[..PolicyParams::LEN])?;
        self.backbone = BackboneParams::from_slice(&v[PolicyParams::LEN..])?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains on `samples` (the hard subset) for the configured epochs.
///
/// With `resume`, training continues after the checkpoint's last completed
/// epoch; per-epoch randomness is derived from `(seed, epoch)` so a resumed
/// run matches an uninterrupted one. `on_epoch` runs after every epoch with
/// the current state.
pub fn train(
    samples: &[Sample],
    cfg: &TrainConfig,
    rewards: &RewardModel,
    resume: Option<Checkpoint>,
    on_step: &mut dyn FnMut(&StepMetrics) -> Result<()>,
    on_epoch: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let mut ck = match resume {
        Some(ck) => {
            ck.validate()?;
            if ck.config_hash != cfg.hash() {
                return Err(Error::Checkpoint("checkpoint was written with a different config".into()));
            }
            ck
        }
        None => Checkpoint::initial(cfg),
    };
    let groups = [
        ParamGroup {
            range: 0..PolicyParams::LEN,
            multiplier: cfg.head_lr_multiplier,
        },
        ParamGroup {
            range: PolicyParams::LEN..PolicyParams::LEN + ck.backbone.len(),
            multiplier: 1.0,
        },
    ];
    let adam = cfg.adam();
    let mut metrics = Vec::new();
    for epoch in ck.epoch..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for &i in &order {
            let sample = prepare_input(&samples[i], cfg.patch_size, &mut rng)?;
            let old = PolicySnapshot::capture(&ck.policy, SnapshotRole::Old);
            let group = group_rollout(&sample, &old, &ck.backbone, rewards, cfg.group_size, cfg.adv_eps, &mut rng)?;
            let loss = total_loss(&group, &sample.truth, &ck.policy, &ck.backbone, &ck.reference, cfg, epoch)
                .map_err(|e| Error::TrainingAborted {
                    sample_id: sample.id.clone(),
                    reason: e.to_string(),
                })?;
            if !loss.total.is_finite() {
                return Err(Error::TrainingAborted {
                    sample_id: sample.id.clone(),
                    reason: format!("loss is {}", loss.total),
                });
            }
            let m = StepMetrics::from_loss(ck.step, epoch, &loss, &group.rewards());
            let mut flat = ck.flat_params();
            let mut grads = loss.policy_grad.to_vec();
            grads.extend(loss.backbone_grad.to_vec());
            adam_step(&mut flat, &grads, &mut ck.adam, &adam, &groups)?;
            ck.set_flat_params(&flat)?;
            ck.step += 1;
            on_step(&m)?;
            metrics.push(m);
        }
        ck.epoch = epoch + 1;
        on_epoch(&ck)?;
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        metrics,
    })
}
