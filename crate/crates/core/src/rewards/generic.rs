use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RewardWeights;
use crate::error::{Error, Result};
use crate::imgcore::{psnr, ssim, Image};

/// Which weight of the generic blend a perceptual scorer fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerSlot {
    Clip,
    Lpips,
    Aesthetic,
}

impl ScorerSlot {
    pub fn key(&self) -> &'static str {
        match self {
            ScorerSlot::Clip => "clip",
            ScorerSlot::Lpips => "lpips",
            ScorerSlot::Aesthetic => "aes",
        }
    }

    fn weight(&self, w: &RewardWeights) -> f64 {
        match self {
            ScorerSlot::Clip => w.w_clip,
            ScorerSlot::Lpips => w.w_lpips,
            ScorerSlot::Aesthetic => w.w_aes,
        }
    }
}

/// A learned perceptual metric plugged into the generic blend. Scores are
/// expected in `[0, 1]` (higher is better) and must be deterministic.
pub trait PerceptualScorer: Send + Sync {
    fn name(&self) -> &str;

    /// `reference` is `None` for no-reference metrics such as aesthetics.
    fn score(&self, restored: &Image, reference: Option<&Image>) -> std::result::Result<f64, String>;
}

/// Enabled perceptual scorers, keyed by name. At most one per slot.
#[derive(Default)]
pub struct ScorerRegistry {
    entries: BTreeMap<String, (ScorerSlot, Box<dyn PerceptualScorer>)>,
}

impl ScorerRegistry {
    pub fn register(&mut self, slot: ScorerSlot, scorer: Box<dyn PerceptualScorer>) -> Result<()> {
        if self.entries.values().any(|(s, _)| *s == slot) {
            return Err(Error::Config(format!("scorer slot `{}` already filled", slot.key())));
        }
        let name = scorer.name().to_string();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("scorer `{name}` already registered")));
        }
        self.entries.insert(name, (slot, scorer));
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// PSNR mapped linearly from `[tau_min, tau_max]` onto `[0, 1]`.
pub fn psnr_score(psnr_db: f64, w: &RewardWeights) -> f64 {
    ((psnr_db - w.tau_min) / (w.tau_max - w.tau_min)).clamp(0.0, 1.0)
}

/// Blend of precomputed terms. `extra` carries `(slot, score)` for every
/// enabled perceptual scorer; weights renormalize over enabled terms.
pub fn r_gen_from_terms(
    psnr_db: f64,
    ssim_value: f64,
    extra: &[(ScorerSlot, f64)],
    w: &RewardWeights,
) -> (f64, BTreeMap<String, f64>) {
    let mut terms = BTreeMap::new();
    let p = psnr_score(psnr_db, w);
    let s = ssim_value.clamp(0.0, 1.0);
    terms.insert("psnr".to_string(), p);
    terms.insert("ssim".to_string(), s);
    let mut num = w.w_psnr * p + w.w_ssim * s;
    let mut den = w.w_psnr + w.w_ssim;
    for (slot, score) in extra {
        let sw = slot.weight(w);
        num += sw * score;
        den += sw;
        terms.insert(slot.key().to_string(), *score);
    }
    ((num / den).clamp(0.0, 1.0), terms)
}

/// Generic quality blend of `y` against reference `t`.
pub fn r_gen(
    y: &Image,
    t: &Image,
    scorers: &ScorerRegistry,
    w: &RewardWeights,
) -> Result<(f64, BTreeMap<String, f64>)> {
    let p = psnr(y, t)?;
    let s = ssim(y, t)?;
    let mut extra = Vec::with_capacity(scorers.entries.len());
    for (name, (slot, scorer)) in &scorers.entries {
        let reference = (*slot != ScorerSlot::Aesthetic).then_some(t);
        let v = scorer.score(y, reference).map_err(|reason| Error::Scorer {
            name: name.clone(),
            reason,
        })?;
        if !v.is_finite() {
            return Err(Error::Scorer {
                name: name.clone(),
                reason: format!("non-finite score {v}"),
            });
        }
        extra.push((*slot, v.clamp(0.0, 1.0)));
    }
    Ok(r_gen_from_terms(p, s, &extra, w))
}
