//! Composite restoration reward.
//!
//! `R = λ_gen·R_gen + λ_qwen·R_qwen + λ_task·R_task`, with a generic
//! fidelity blend, an expert-judge score and a degradation-specific shaping
//! term. Every component lies in `[0, 1]`.

mod generic;
mod task;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use generic::{
    psnr_score, r_gen, r_gen_from_terms, PerceptualScorer, ScorerRegistry, ScorerSlot,
};
pub use task::{r_aniso, r_contrast, r_grad, r_lowlight, r_sharp, r_task, TaskScore};

use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::judge::Judge;

/// Noise levels (on the 0–255 scale) used for denoising samples.
pub const DENOISE_SIGMAS: [u8; 3] = [15, 25, 50];

/// Degradation attached to a training sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DegradationKind {
    Denoise { sigma: u8 },
    Derain,
    Dehaze,
    Deblur,
    LowLight,
}

impl DegradationKind {
    /// One representative per task family, in judge-label order.
    pub const FAMILIES: [DegradationKind; 5] = [
        DegradationKind::Denoise { sigma: 25 },
        DegradationKind::Derain,
        DegradationKind::Dehaze,
        DegradationKind::Deblur,
        DegradationKind::LowLight,
    ];

    /// Task family name, also the corpus directory name.
    pub fn family(&self) -> &'static str {
        match self {
            DegradationKind::Denoise { .. } => "denoise",
            DegradationKind::Derain => "derain",
            DegradationKind::Dehaze => "dehaze",
            DegradationKind::Deblur => "deblur",
            DegradationKind::LowLight => "lowlight",
        }
    }

    /// Index used by the judge prompt: denoise 0/1/2 by noise level, then
    /// derain 3, dehaze 4, deblur 5, low-light 6.
    pub fn judge_label(&self) -> i32 {
        match self {
            DegradationKind::Denoise { sigma } => match sigma {
                0..=15 => 0,
                16..=25 => 1,
                _ => 2,
            },
            DegradationKind::Derain => 3,
            DegradationKind::Dehaze => 4,
            DegradationKind::Deblur => 5,
            DegradationKind::LowLight => 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DegradationKind::Denoise { sigma } if !DENOISE_SIGMAS.contains(sigma) => Err(Error::Config(
                format!("denoise sigma {sigma} not in {DENOISE_SIGMAS:?}"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegradationKind::Denoise { sigma } => write!(f, "denoise(sigma={sigma})"),
            other => f.write_str(other.family()),
        }
    }
}

/// Reward weights and PSNR thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
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
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_gen: 0.6,
            lambda_qwen: 0.1,
            lambda_task: 0.3,
            w_clip: 0.25,
            w_lpips: 0.25,
            w_aes: 0.15,
            w_psnr: 0.20,
            w_ssim: 0.15,
            tau_min: 15.0,
            tau_max: 40.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_gen, self.lambda_qwen, self.lambda_task];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Config("reward lambdas must be finite and non-negative".into()));
        }
        if (lambdas.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("reward lambdas {lambdas:?} do not sum to 1")));
        }
        let gen = [self.w_clip, self.w_lpips, self.w_aes, self.w_psnr, self.w_ssim];
        if gen.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.w_psnr + self.w_ssim <= 0.0 {
            return Err(Error::Config("generic weights must be non-negative with w_psnr + w_ssim > 0".into()));
        }
        if !(self.tau_min.is_finite() && self.tau_max.is_finite() && self.tau_min < self.tau_max) {
            return Err(Error::Config("psnr thresholds need tau_min < tau_max".into()));
        }
        Ok(())
    }
}

/// Per-component reward scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_gen: f64,
    pub r_qwen: f64,
    pub r_task: f64,
    pub combined: f64,
    /// Normalized sub-scores of every enabled generic metric.
    pub gen_terms: BTreeMap<String, f64>,
    /// Task-aware sub-terms for the sample's degradation.
    pub task_terms: BTreeMap<String, f64>,
    /// Set when the judge score came from the fallback path.
    pub judge_fallback: bool,
}

/// Weighted sum of the three components.
pub fn combine(r_gen: f64, r_qwen: f64, r_task: f64, w: &RewardWeights) -> Result<RewardBreakdown> {
    for (name, v) in [("r_gen", r_gen), ("r_qwen", r_qwen), ("r_task", r_task)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("reward component {name}")));
        }
    }
    Ok(RewardBreakdown {
        r_gen,
        r_qwen,
        r_task,
        combined: w.lambda_gen * r_gen + w.lambda_qwen * r_qwen + w.lambda_task * r_task,
        gen_terms: BTreeMap::new(),
        task_terms: BTreeMap::new(),
        judge_fallback: false,
    })
}

/// JSON reward report for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub sample_id: String,
    pub kind: DegradationKind,
    pub components: BTreeMap<String, f64>,
    pub combined: f64,
}

impl RewardReport {
    pub fn new(sample_id: impl Into<String>, kind: DegradationKind, r: &RewardBreakdown) -> Self {
        let mut components = BTreeMap::new();
        components.insert("r_gen".to_string(), r.r_gen);
        components.insert("r_qwen".to_string(), r.r_qwen);
        components.insert("r_task".to_string(), r.r_task);
        for (k, v) in r.gen_terms.iter().chain(&r.task_terms) {
            components.insert(k.clone(), *v);
        }
        Self {
            sample_id: sample_id.into(),
            kind,
            components,
            combined: r.combined,
        }
    }
}

/// Scores restorations end to end: generic blend, judge and task term.
pub struct RewardModel {
    pub weights: RewardWeights,
    pub scorers: ScorerRegistry,
    judge: Box<dyn Judge>,
}

impl RewardModel {
    pub fn new(weights: RewardWeights, scorers: ScorerRegistry, judge: Box<dyn Judge>) -> Result<Self> {
        weights.validate()?;
        Ok(Self {
            weights,
            scorers,
            judge,
        })
    }

    /// Default weights, no neural scorers, deterministic mock judge.
    pub fn with_mock_judge() -> Self {
        Self::new(
            RewardWeights::default(),
            ScorerRegistry::default(),
            Box::new(crate::judge::MockJudge),
        )
        .expect("default weights are valid")
    }

    pub fn judge(&self) -> &dyn Judge {
        self.judge.as_ref()
    }

    /// Scores `restored` against `truth`. Inputs are clamped to `[0, 1]`.
    pub fn score(
        &self,
        kind: DegradationKind,
        degraded: &Image,
        restored: &Image,
        truth: &Image,
    ) -> Result<RewardBreakdown> {
        restored.check_same_shape(truth)?;
        let (x, y, t) = (degraded.clamped(), restored.clamped(), truth.clamped());
        let gen = r_gen(&y, &t, &self.scorers, &self.weights)?;
        let verdict = self.judge.judge(&x, &y, &t);
        let task = r_task(kind, &y, &t)?;
        let mut out = combine(gen.0, verdict.rescaled, task.value, &self.weights)?;
        out.gen_terms = gen.1;
        out.task_terms = task.terms;
        out.judge_fallback = verdict.fallback;
        Ok(out)
    }
}
