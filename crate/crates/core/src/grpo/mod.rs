//! Group-relative policy optimization of the restoration controls.
//!
//! Each step samples `G` actions for one input from a snapshot of the
//! current policy, scores the restorations, standardizes the rewards within
//! the group and minimizes
//!
//! ```text
//! L = −surrogate + β·KL − τ·H + λ_sup·L_sup + λ_cons·L_cons
//! ```
//!
//! with epoch-annealed `λ_sup`, `λ_cons`. The policy heads learn from the
//! RL terms; the backbone learns from the supervised and consistency terms.

mod adam;
mod objective;
mod report;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use adam::{adam_step, AdamConfig, AdamState, ParamGroup};
pub use objective::{
    advantages, anneal, best_index, kl_estimate, kl_terms, rl_loss, smooth_l1, sup_losses,
    surrogate, surrogate_terms, total_loss, LossBreakdown, RlLoss, SupLosses, SurrogateTerms,
};
pub use report::{
    epoch_summaries, expected_reward, summary_header, write_summary_csv, EpochSummary, MetricValues,
};
pub use train::{
    group_rollout, prepare_input, train, Checkpoint, MetricsWriter, RolloutGroup, StepMetrics,
    TrainOutcome, CHECKPOINT_VERSION, METRICS_HEADER,
};

use crate::backbone::BackboneParams;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_weight: f64,
    pub entropy_weight: f64,
    pub adv_eps: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Learning-rate multiplier of the policy heads.
    pub head_lr_multiplier: f64,
    pub epochs: usize,
    pub lambda_sup_start: f64,
    pub lambda_sup_end: f64,
    pub lambda_cons_start: f64,
    pub lambda_cons_end: f64,
    pub hard_ratio: f64,
    /// Training crop side; inputs smaller than this are used whole.
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_eps: 0.2,
            kl_weight: 0.01,
            entropy_weight: 0.01,
            adv_eps: 1e-8,
            learning_rate: 3e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            head_lr_multiplier: 6.0,
            epochs: 30,
            lambda_sup_start: 0.35,
            lambda_sup_end: 0.1,
            lambda_cons_start: 0.2,
            lambda_cons_end: 0.05,
            hard_ratio: 0.3,
            patch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.group_size < 2 {
            return bad(format!("group_size {} < 2", self.group_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.patch_size < 32 {
            return bad(format!("patch_size {} < 32", self.patch_size));
        }
        let positive = [
            ("clip_eps", self.clip_eps),
            ("adv_eps", self.adv_eps),
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("head_lr_multiplier", self.head_lr_multiplier),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        let non_negative = [
            ("kl_weight", self.kl_weight),
            ("entropy_weight", self.entropy_weight),
            ("lambda_sup_start", self.lambda_sup_start),
            ("lambda_sup_end", self.lambda_sup_end),
            ("lambda_cons_start", self.lambda_cons_start),
            ("lambda_cons_end", self.lambda_cons_end),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be non-negative"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1)"));
            }
        }
        if !(self.hard_ratio > 0.0 && self.hard_ratio <= 1.0) {
            return Err(Error::Ratio {
                name: "hard_ratio",
                value: self.hard_ratio,
                range: "(0, 1]",
            });
        }
        Ok(())
    }

    /// `λ_sup` for an epoch.
    pub fn lambda_sup(&self, epoch: usize) -> f64 {
        anneal(self.lambda_sup_start, self.lambda_sup_end, epoch, self.epochs)
    }

    /// `λ_cons` for an epoch.
    pub fn lambda_cons(&self, epoch: usize) -> f64 {
        anneal(self.lambda_cons_start, self.lambda_cons_end, epoch, self.epochs)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The pre-training model: seeded policy heads and the default backbone.
pub fn init_model(seed: u64) -> (PolicyParams, BackboneParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (PolicyParams::init(&mut rng), BackboneParams::new(3))
}
