use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{group_rollout, StepMetrics};
use crate::backbone::BackboneParams;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::policy::{PolicyParams, PolicySnapshot, SnapshotRole};
use crate::rewards::RewardModel;

/// The per-step quantities of a metrics row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub total_loss: f64,
    pub rl_loss: f64,
    pub sup_loss: f64,
    pub cons_loss: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_frac: f64,
}

impl MetricValues {
    pub const NAMES: [&'static str; 9] = [
        "total_loss",
        "rl_loss",
        "sup_loss",
        "cons_loss",
        "reward_mean",
        "reward_std",
        "kl",
        "entropy",
        "clip_frac",
    ];

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.total_loss,
            self.rl_loss,
            self.sup_loss,
            self.cons_loss,
            self.reward_mean,
            self.reward_std,
            self.kl,
            self.entropy,
            self.clip_frac,
        ]
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        Self {
            total_loss: v[0],
            rl_loss: v[1],
            sup_loss: v[2],
            cons_loss: v[3],
            reward_mean: v[4],
            reward_std: v[5],
            kl: v[6],
            entropy: v[7],
            clip_frac: v[8],
        }
    }
}

impl From<&StepMetrics> for MetricValues {
    fn from(m: &StepMetrics) -> Self {
        Self {
            total_loss: m.total_loss,
            rl_loss: m.rl_loss,
            sup_loss: m.sup_loss,
            cons_loss: m.cons_loss,
            reward_mean: m.reward_mean,
            reward_std: m.reward_std,
            kl: m.kl,
            entropy: m.entropy,
            clip_frac: m.clip_frac,
        }
    }
}

/// Mean and population standard deviation of every metric over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean: MetricValues,
    pub std: MetricValues,
}

/// Groups rows by epoch, in order of first appearance.
pub fn epoch_summaries(metrics: &[StepMetrics]) -> Result<Vec<EpochSummary>> {
    if metrics.is_empty() {
        return Err(Error::Metrics("no rows".into()));
    }
    let mut epochs: Vec<usize> = Vec::new();
    for m in metrics {
        if !epochs.contains(&m.epoch) {
            epochs.push(m.epoch);
        }
    }
    Ok(epochs
        .into_iter()
        .map(|epoch| {
            let rows: Vec<[f64; 9]> = metrics
                .iter()
                .filter(|m| m.epoch == epoch)
                .map(|m| MetricValues::from(m).to_array())
                .collect();
            let n = rows.len() as f64;
            let mean: [f64; 9] = std::array::from_fn(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n);
            let std: [f64; 9] = std::array::from_fn(|k| {
                (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt()
            });
            EpochSummary {
                epoch,
                steps: rows.len(),
                mean: MetricValues::from_array(mean),
                std: MetricValues::from_array(std),
            }
        })
        .collect())
}

/// Header of [`write_summary_csv`]: `epoch,steps` then `<name>_mean,<name>_std`
/// per metric.
pub fn summary_header() -> Vec<String> {
    let mut h = vec!["epoch".to_string(), "steps".to_string()];
    for n in MetricValues::NAMES {
        h.push(format!("{n}_mean"));
        h.push(format!("{n}_std"));
    }
    h
}

pub fn write_summary_csv(path: &Path, summaries: &[EpochSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Metrics(e.to_string()))?;
    w.write_record(summary_header()).map_err(|e| Error::Metrics(e.to_string()))?;
    for s in summaries {
        let mut row = vec![s.epoch.to_string(), s.steps.to_string()];
        for (m, d) in s.mean.to_array().iter().zip(s.std.to_array()) {
            row.push(m.to_string());
            row.push(d.to_string());
        }
        w.write_record(&row).map_err(|e| Error::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Monte-Carlo estimate of the mean combined reward of the stochastic
/// policy: `draws` sampled restorations per sample, averaged over samples.
/// Uses a private RNG so the estimate depends only on its arguments.
pub fn expected_reward(
    samples: &[Sample],
    policy: &PolicyParams,
    backbone: &BackboneParams,
    rewards: &RewardModel,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    let snap = PolicySnapshot::capture(policy, SnapshotRole::Old);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for s in samples {
        let g = group_rollout(s, &snap, backbone, rewards, draws, 1e-8, &mut rng)?;
        total += g.rewards().iter().sum::<f64>() / draws as f64;
    }
    Ok(total / samples.len() as f64)
}
