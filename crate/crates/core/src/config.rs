//! Flat run configuration shared by every command.
//!
//! One JSON object holds the training, reward, judge, corpus and path
//! settings. Unknown keys are rejected so a typo never silently falls back
//! to a default.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::{DegradationParams, MiningMode};
use crate::error::{Error, Result};
use crate::grpo::TrainConfig;
use crate::judge::{HttpJudge, HttpJudgeConfig, Judge, MockJudge, JUDGE_ENDPOINT_ENV};
use crate::rewards::{RewardModel, RewardWeights, ScorerRegistry};

/// File name of the effective-config echo written into output directories.
pub const EFFECTIVE_CONFIG_FILE: &str = "config.json";

pub const PRESETS: [&str; 2] = ["default", "smoke"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds corpus synthesis, mining and training.
    pub seed: u64,

    // corpus
    pub per_kind: usize,
    pub size: usize,
    pub rain_angle_deg: (f64, f64),
    pub rain_length_px: (f64, f64),
    pub rain_intensity: (f64, f64),
    pub rain_density: f64,
    pub haze_airlight: (f64, f64),
    pub haze_transmission: (f64, f64),
    pub blur_sigma_px: (f64, f64),
    pub lowlight_scale: (f64, f64),
    pub lowlight_gamma: (f64, f64),
    pub lowlight_noise_sigma: f64,
    pub mining_mode: MiningMode,

    // optimization
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_weight: f64,
    pub entropy_weight: f64,
    pub adv_eps: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub head_lr_multiplier: f64,
    pub epochs: usize,
    pub lambda_sup_start: f64,
    pub lambda_sup_end: f64,
    pub lambda_cons_start: f64,
    pub lambda_cons_end: f64,
    pub hard_ratio: f64,
    pub patch_size: usize,
    /// Sampled restorations per image when estimating the policy's mean reward.
    pub eval_draws: usize,

    // rewards
    pub lambda_gen: f64,
    pub lambda_qwen: f64,
    pub lambda_task: f64,
    pub w_clip: f64,
    pub w_lpips: f64,
    pub w_aes: f64,
    pub w_psnr: f64,
    pub w_ssim: f64,
    pub tau_min: f64,
    pub tau_max: f64,

    // judge
    /// Vision-language judge URL; `None` selects the mock judge. The
    /// `RESTORL_JUDGE_ENDPOINT` variable overrides it.
    pub judge_endpoint: Option<String>,
    pub judge_timeout_ms: u64,
    /// Total attempts per request.
    pub judge_retries: u32,

    // paths
    pub corpus_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::compose(
            0,
            10,
            128,
            &DegradationParams::default(),
            &TrainConfig::default(),
            &RewardWeights::default(),
        )
    }
}

impl RunConfig {
    fn compose(
        seed: u64,
        per_kind: usize,
        size: usize,
        d: &DegradationParams,
        t: &TrainConfig,
        w: &RewardWeights,
    ) -> Self {
        Self {
            seed,
            per_kind,
            size,
            rain_angle_deg: d.rain_angle_deg,
            rain_length_px: d.rain_length_px,
            rain_intensity: d.rain_intensity,
            rain_density: d.rain_density,
            haze_airlight: d.haze_airlight,
            haze_transmission: d.haze_transmission,
            blur_sigma_px: d.blur_sigma_px,
            lowlight_scale: d.lowlight_scale,
            lowlight_gamma: d.lowlight_gamma,
            lowlight_noise_sigma: d.lowlight_noise_sigma,
            mining_mode: MiningMode::default(),
            group_size: t.group_size,
            clip_eps: t.clip_eps,
            kl_weight: t.kl_weight,
            entropy_weight: t.entropy_weight,
            adv_eps: t.adv_eps,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            head_lr_multiplier: t.head_lr_multiplier,
            epochs: t.epochs,
            lambda_sup_start: t.lambda_sup_start,
            lambda_sup_end: t.lambda_sup_end,
            lambda_cons_start: t.lambda_cons_start,
            lambda_cons_end: t.lambda_cons_end,
            hard_ratio: t.hard_ratio,
            patch_size: t.patch_size,
            eval_draws: 32,
            lambda_gen: w.lambda_gen,
            lambda_qwen: w.lambda_qwen,
            lambda_task: w.lambda_task,
            w_clip: w.w_clip,
            w_lpips: w.w_lpips,
            w_aes: w.w_aes,
            w_psnr: w.w_psnr,
            w_ssim: w.w_ssim,
            tau_min: w.tau_min,
            tau_max: w.tau_max,
            judge_endpoint: None,
            judge_timeout_ms: 30_000,
            judge_retries: 3,
            corpus_dir: None,
            out_dir: None,
        }
    }

    /// Desk-scale profile: 8 images of 32×32 per kind, 20 epochs over the
    /// mined subset (300 steps), whole-image patches and a learning rate
    /// large enough for the policy to move within that budget.
    pub fn smoke() -> Self {
        Self {
            per_kind: 8,
            size: 32,
            epochs: 20,
            patch_size: 32,
            learning_rate: 7e-4,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "smoke" => Ok(Self::smoke()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        fs::write(&path, self.to_json() + "\n")?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_kind == 0 {
            return Err(Error::Config("per_kind must be positive".into()));
        }
        if self.eval_draws < 2 {
            return Err(Error::Config(format!("eval_draws {} < 2", self.eval_draws)));
        }
        if self.judge_timeout_ms == 0 {
            return Err(Error::Config("judge_timeout_ms must be positive".into()));
        }
        self.degradations().validate()?;
        self.train_config().validate()?;
        self.reward_weights().validate()
    }

    pub fn degradations(&self) -> DegradationParams {
        DegradationParams {
            rain_angle_deg: self.rain_angle_deg,
            rain_length_px: self.rain_length_px,
            rain_intensity: self.rain_intensity,
            rain_density: self.rain_density,
            haze_airlight: self.haze_airlight,
            haze_transmission: self.haze_transmission,
            blur_sigma_px: self.blur_sigma_px,
            lowlight_scale: self.lowlight_scale,
            lowlight_gamma: self.lowlight_gamma,
            lowlight_noise_sigma: self.lowlight_noise_sigma,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            group_size: self.group_size,
            clip_eps: self.clip_eps,
            kl_weight: self.kl_weight,
            entropy_weight: self.entropy_weight,
            adv_eps: self.adv_eps,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            head_lr_multiplier: self.head_lr_multiplier,
            epochs: self.epochs,
            lambda_sup_start: self.lambda_sup_start,
            lambda_sup_end: self.lambda_sup_end,
            lambda_cons_start: self.lambda_cons_start,
            lambda_cons_end: self.lambda_cons_end,
            hard_ratio: self.hard_ratio,
            patch_size: self.patch_size,
            seed: self.seed,
        }
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            lambda_gen: self.lambda_gen,
            lambda_qwen: self.lambda_qwen,
            lambda_task: self.lambda_task,
            w_clip: self.w_clip,
            w_lpips: self.w_lpips,
            w_aes: self.w_aes,
            w_psnr: self.w_psnr,
            w_ssim: self.w_ssim,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
        }
    }

    /// Endpoint after applying the environment override.
    pub fn effective_endpoint(&self) -> Option<String> {
        std::env::var(JUDGE_ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .or_else(|| self.judge_endpoint.clone().filter(|s| !s.trim().is_empty()))
    }

    pub fn judge(&self) -> Box<dyn Judge> {
        match self.effective_endpoint() {
            Some(endpoint) => Box::new(HttpJudge::new(HttpJudgeConfig::new(
                endpoint,
                Duration::from_millis(self.judge_timeout_ms),
                self.judge_retries,
            ))),
            None => Box::new(MockJudge),
        }
    }

    pub fn reward_model(&self) -> Result<RewardModel> {
        RewardModel::new(self.reward_weights(), ScorerRegistry::default(), self.judge())
    }
}
