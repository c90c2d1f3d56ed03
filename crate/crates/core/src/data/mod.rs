//! Synthetic corpora, image files and hard-sample curation.
//!
//! On disk a corpus is a directory holding `manifest.json` and
//! `{family}/{id}_{deg|gt}.png` pairs. Record paths are stored relative to
//! the corpus root.

mod io;
mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use io::{decode_png, decode_pnm, encode_png, encode_pnm, load_image, quantize, save_image};
pub use synth::{degrade, gaussian_blur, gen_clean, DegradationParams, MIN_SYNTH_SIZE};

use crate::backbone::{restore_deterministic, BackboneParams};
use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::policy::PolicyParams;
use crate::rewards::{DegradationKind, RewardModel, DENOISE_SIGMAS};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_HARD_RATIO: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub kind: DegradationKind,
    pub degraded: PathBuf,
    pub truth: PathBuf,
    /// Combined reward of the pre-training model's deterministic output.
    pub baseline_reward: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub records: Vec<SampleRecord>,
    /// Record count per task family.
    pub per_kind_counts: BTreeMap<String, usize>,
    /// Set once the corpus has been mined.
    pub curation_ratio: Option<f64>,
}

fn kind_counts(records: &[SampleRecord]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.kind.family().to_string()).or_insert(0) += 1;
    }
    counts
}

impl CorpusManifest {
    pub fn new(seed: u64, records: Vec<SampleRecord>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            seed,
            per_kind_counts: kind_counts(&records),
            records,
            curation_ratio: None,
        }
    }

    pub fn selected(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.selected)
    }

    /// Records left out of the hard subset; the evaluation split.
    pub fn held_out(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| !r.selected)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// A degraded/clean pair in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub kind: DegradationKind,
    pub degraded: Image,
    pub truth: Image,
}

impl Sample {
    pub fn load(root: &Path, record: &SampleRecord) -> Result<Self> {
        Ok(Self {
            id: record.id.clone(),
            kind: record.kind,
            degraded: load_image(&root.join(&record.degraded))?,
            truth: load_image(&root.join(&record.truth))?,
        })
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `per_kind` pairs for each of the five families, deterministic per seed.
/// Denoising samples cycle through the three noise levels.
pub fn synth_samples(
    per_kind: usize,
    size: usize,
    seed: u64,
    params: &DegradationParams,
) -> Result<Vec<Sample>> {
    params.validate()?;
    let cleans = gen_clean(per_kind * DegradationKind::FAMILIES.len(), size, seed)?;
    let mut out = Vec::with_capacity(cleans.len());
    for (f, family) in DegradationKind::FAMILIES.iter().enumerate() {
        for i in 0..per_kind {
            let idx = f * per_kind + i;
            let kind = match family {
                DegradationKind::Denoise { .. } => DegradationKind::Denoise {
                    sigma: DENOISE_SIGMAS[i % DENOISE_SIGMAS.len()],
                },
                k => *k,
            };
            let degraded = degrade(&cleans[idx], kind, mix_seed(seed, idx as u64), params)?;
            out.push(Sample {
                id: format!("{}_{i:04}", family.family()),
                kind,
                degraded,
                truth: cleans[idx].clone(),
            });
        }
    }
    Ok(out)
}

/// Writes a synthetic corpus under `root` and returns its unscored manifest.
pub fn write_corpus(
    root: &Path,
    per_kind: usize,
    size: usize,
    seed: u64,
    params: &DegradationParams,
) -> Result<CorpusManifest> {
    let samples = synth_samples(per_kind, size, seed, params)?;
    let mut records = Vec::with_capacity(samples.len());
    for s in &samples {
        let dir = PathBuf::from(s.kind.family());
        let rec = SampleRecord {
            id: s.id.clone(),
            kind: s.kind,
            degraded: dir.join(format!("{}_deg.png", s.id)),
            truth: dir.join(format!("{}_gt.png", s.id)),
            baseline_reward: None,
            selected: false,
        };
        save_image(&s.degraded, &root.join(&rec.degraded))?;
        save_image(&s.truth, &root.join(&rec.truth))?;
        records.push(rec);
    }
    let manifest = CorpusManifest::new(seed, records);
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Combined reward of the deterministic restoration of one pair. A failed
/// restoration scores 0 with a warning.
pub fn baseline_reward(
    sample: &Sample,
    backbone: &BackboneParams,
    policy: &PolicyParams,
    rewards: &RewardModel,
) -> f64 {
    let scored = restore_deterministic(&sample.degraded, backbone, policy).and_then(|y| {
        rewards.score(sample.kind, &sample.degraded, &y.clamped(), &sample.truth)
    });
    match scored {
        Ok(r) => r.combined,
        Err(e) => {
            log::warn!("baseline evaluation of {} failed: {e}", sample.id);
            0.0
        }
    }
}

/// Scores every record with the pre-training model. Missing or unreadable
/// files are errors.
pub fn evaluate_baseline(
    records: &mut [SampleRecord],
    root: &Path,
    backbone: &BackboneParams,
    policy: &PolicyParams,
    rewards: &RewardModel,
) -> Result<()> {
    for rec in records.iter_mut() {
        let sample = Sample::load(root, rec)?;
        rec.baseline_reward = Some(baseline_reward(&sample, backbone, policy, rewards));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    /// Worst fraction within each task family.
    #[default]
    Stratified,
    /// Worst fraction of the whole corpus.
    Global,
}

/// `ceil(ratio·count)`, tolerant of floating error such as `0.3·10`.
pub fn hard_count(ratio: f64, count: usize) -> usize {
    ((ratio * count as f64) - 1e-9).ceil().max(0.0) as usize
}

fn select_worst(records: &mut [SampleRecord], idx: &mut [usize], ratio: f64) {
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        ra.baseline_reward
            .partial_cmp(&rb.baseline_reward)
            .expect("scores are finite")
            .then_with(|| ra.id.cmp(&rb.id))
    });
    let k = hard_count(ratio, idx.len());
    for &i in &idx[..k] {
        records[i].selected = true;
    }
}

/// Marks the lowest-scoring `ceil(ratio·count)` records (ties by id) as
/// selected.
pub fn mine_hard(
    mut records: Vec<SampleRecord>,
    ratio: f64,
    mode: MiningMode,
    seed: u64,
) -> Result<CorpusManifest> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Ratio {
            name: "hard_ratio",
            value: ratio,
            range: "(0, 1]",
        });
    }
    for r in &records {
        match r.baseline_reward {
            Some(v) if v.is_finite() => {}
            _ => return Err(Error::Config(format!("record {} has no baseline score", r.id))),
        }
    }
    records.iter_mut().for_each(|r| r.selected = false);
    match mode {
        MiningMode::Global => {
            let mut idx: Vec<usize> = (0..records.len()).collect();
            select_worst(&mut records, &mut idx, ratio);
        }
        MiningMode::Stratified => {
            let mut groups: BTreeMap<&'static str, Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                groups.entry(r.kind.family()).or_default().push(i);
            }
            for idx in groups.values_mut() {
                select_worst(&mut records, idx, ratio);
            }
        }
    }
    let mut m = CorpusManifest::new(seed, records);
    m.curation_ratio = Some(ratio);
    Ok(m)
}
