use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use restorl::backbone::restore_deterministic;
use restorl::config::RunConfig;
use restorl::data::{
    evaluate_baseline, mine_hard, synth_samples, write_corpus, CorpusManifest, MiningMode, Sample, MANIFEST_FILE,
};
use restorl::grpo::{
    epoch_summaries, expected_reward, train as run_training, write_summary_csv, Checkpoint, EpochSummary,
    MetricsWriter, StepMetrics,
};
use restorl::imgcore::{psnr, ssim};
use restorl::judge::{build_prompt, HttpJudge, HttpJudgeConfig, Judge};
use restorl::rewards::{RewardModel, ScorerRegistry};

use crate::{CliError, CliResult, ConfigArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAIN_SUMMARY_FILE: &str = "summary.json";
pub const MINING_REPORT_FILE: &str = "mining_report.json";
pub const EVAL_JSON_FILE: &str = "eval.json";
pub const EVAL_CSV_FILE: &str = "eval.csv";
pub const REPORT_CSV_FILE: &str = "epochs.csv";
pub const REPORT_JSON_FILE: &str = "series.json";

const HISTOGRAM_BINS: usize = 10;

fn required(flag: Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| CliError::User(format!("--{name} is required (or set `{name}_dir` in the config)")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(restorl::Error::from)?;
    fs::write(path, text + "\n").map_err(restorl::Error::from)?;
    Ok(())
}

/// The `--judge-endpoint` flag wins over the environment, which wins over
/// the config file.
fn judge_for(args: &ConfigArgs, cfg: &RunConfig) -> Box<dyn Judge> {
    match &args.judge_endpoint {
        Some(url) => Box::new(HttpJudge::new(HttpJudgeConfig::new(
            url.clone(),
            Duration::from_millis(cfg.judge_timeout_ms),
            cfg.judge_retries,
        ))),
        None => cfg.judge(),
    }
}

fn reward_model(args: &ConfigArgs, cfg: &RunConfig) -> CliResult<RewardModel> {
    Ok(RewardModel::new(
        cfg.reward_weights(),
        ScorerRegistry::default(),
        judge_for(args, cfg),
    )?)
}

fn load_manifest(corpus: &Path) -> CliResult<CorpusManifest> {
    let path = corpus.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(CliError::User(format!("no manifest at {}", path.display())));
    }
    Ok(CorpusManifest::load(&path)?)
}

pub fn synth(args: &ConfigArgs, out: Option<PathBuf>, per_kind: Option<usize>, size: Option<usize>) -> CliResult<()> {
    let mut cfg = args.resolve()?;
    if let Some(n) = per_kind {
        cfg.per_kind = n;
    }
    if let Some(s) = size {
        cfg.size = s;
    }
    cfg.validate()?;
    let out = required(out, &cfg.corpus_dir, "out")?;
    let manifest = write_corpus(&out, cfg.per_kind, cfg.size, cfg.seed, &cfg.degradations())?;
    cfg.echo(&out)?;
    println!(
        "wrote {} pairs ({} per kind, {}x{}) to {}",
        manifest.records.len(),
        cfg.per_kind,
        cfg.size,
        cfg.size,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct KindMining {
    count: usize,
    selected: usize,
    /// Counts over equal-width bins of `[0, 1]`; the last bin is closed.
    histogram: Vec<usize>,
    min: f64,
    max: f64,
    mean: f64,
    /// Highest baseline reward among the selected records.
    selected_max: f64,
}

#[derive(Serialize)]
struct MiningReport {
    ratio: f64,
    mode: MiningMode,
    total: usize,
    selected: usize,
    bins: usize,
    kinds: BTreeMap<String, KindMining>,
}

fn histogram(values: &[f64]) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BINS];
    for v in values {
        let b = ((v * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1;
    }
    h
}

fn mining_report(m: &CorpusManifest, ratio: f64, mode: MiningMode) -> MiningReport {
    let mut kinds = BTreeMap::new();
    for family in m.per_kind_counts.keys() {
        let recs: Vec<_> = m.records.iter().filter(|r| r.kind.family() == family).collect();
        let scores: Vec<f64> = recs.iter().filter_map(|r| r.baseline_reward).collect();
        let selected: Vec<f64> = recs.iter().filter(|r| r.selected).filter_map(|r| r.baseline_reward).collect();
        kinds.insert(
            family.clone(),
            KindMining {
                count: recs.len(),
                selected: selected.len(),
                histogram: histogram(&scores),
                min: scores.iter().copied().fold(f64::INFINITY, f64::min),
                max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
                selected_max: selected.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            },
        );
    }
    MiningReport {
        ratio,
        mode,
        total: m.records.len(),
        selected: m.selected().count(),
        bins: HISTOGRAM_BINS,
        kinds,
    }
}

pub fn mine(args: &ConfigArgs, corpus: Option<PathBuf>, ratio: Option<f64>, mode: Option<MiningMode>) -> CliResult<()> {
    let mut cfg = args.resolve()?;
    if let Some(r) = ratio {
        cfg.hard_ratio = r;
    }
    if let Some(m) = mode {
        cfg.mining_mode = m;
    }
    cfg.validate()?;
    let corpus = required(corpus, &cfg.corpus_dir, "corpus")?;
    let manifest = load_manifest(&corpus)?;
    let ck = Checkpoint::initial(&cfg.train_config());
    let rewards = reward_model(args, &cfg)?;
    let mut records = manifest.records;
    evaluate_baseline(&mut records, &corpus, &ck.backbone, &ck.policy, &rewards)?;
    let mined = mine_hard(records, cfg.hard_ratio, cfg.mining_mode, manifest.seed)?;
    mined.save(&corpus.join(MANIFEST_FILE))?;
    let report = mining_report(&mined, cfg.hard_ratio, cfg.mining_mode);
    write_json(&corpus.join(MINING_REPORT_FILE), &report)?;
    cfg.echo(&corpus)?;
    println!("selected {} of {} records", report.selected, report.total);
    for (family, k) in &report.kinds {
        let bars: Vec<String> = k.histogram.iter().map(|c| c.to_string()).collect();
        println!(
            "  {family:<9} {}/{} selected, reward {:.3}..{:.3}, histogram [{}]",
            k.selected,
            k.count,
            k.min,
            k.max,
            bars.join(" ")
        );
    }
    Ok(())
}

fn load_samples<'a>(corpus: &Path, records: impl Iterator<Item = &'a restorl::data::SampleRecord>) -> CliResult<Vec<Sample>> {
    records.map(|r| Sample::load(corpus, r).map_err(CliError::from)).collect()
}

#[derive(Serialize)]
struct PsnrDelta {
    count: usize,
    before: f64,
    after: f64,
    delta: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    judge: String,
    mock_judge: bool,
    train_samples: usize,
    epochs: usize,
    steps: u64,
    resumed: bool,
    first_epoch_reward_mean: f64,
    last_epoch_reward_mean: f64,
    first_epoch_total_loss: f64,
    last_epoch_total_loss: f64,
    /// Monte-Carlo mean reward of the stochastic policy, same draws before
    /// and after training.
    expected_reward_before: f64,
    expected_reward_after: f64,
    eval_draws: usize,
    /// Deterministic-restoration PSNR on the training subset, per family.
    psnr_delta: BTreeMap<String, PsnrDelta>,
}

fn mean_psnr(samples: &[Sample], ck: &Checkpoint) -> CliResult<BTreeMap<String, (usize, f64)>> {
    let mut acc: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for s in samples {
        let y = restore_deterministic(&s.degraded, &ck.backbone, &ck.policy)?;
        let p = psnr(&y.clamped(), &s.truth)?;
        let e = acc.entry(s.kind.family().to_string()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += p;
    }
    Ok(acc.into_iter().map(|(k, (n, sum))| (k, (n, sum / n as f64))).collect())
}

pub fn train(args: &ConfigArgs, corpus: Option<PathBuf>, out: Option<PathBuf>, resume: bool) -> CliResult<()> {
    let cfg = args.resolve()?;
    let corpus = required(corpus, &cfg.corpus_dir, "corpus")?;
    let out = required(out, &cfg.out_dir, "out")?;
    let manifest = load_manifest(&corpus)?;
    if manifest.curation_ratio.is_none() {
        return Err(CliError::User(format!("corpus {} has not been mined", corpus.display())));
    }
    let samples = load_samples(&corpus, manifest.selected())?;
    let tc = cfg.train_config();
    let rewards = reward_model(args, &cfg)?;
    fs::create_dir_all(&out).map_err(restorl::Error::from)?;
    cfg.echo(&out)?;

    let ck_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);
    let (start, mut writer) = if resume {
        if !ck_path.is_file() {
            return Err(CliError::User(format!("nothing to resume: no {}", ck_path.display())));
        }
        (Some(Checkpoint::load(&ck_path)?), MetricsWriter::append_to(&metrics_path)?)
    } else {
        (None, MetricsWriter::create(&metrics_path)?)
    };

    let initial = Checkpoint::initial(&tc);
    let started = Instant::now();
    let outcome = run_training(
        &samples,
        &tc,
        &rewards,
        start,
        &mut |m| writer.write(m),
        &mut |ck| {
            log::info!("epoch {} done after {} steps", ck.epoch, ck.step);
            ck.save(&ck_path)
        },
    )?;
    log::info!("training took {:.1} s", started.elapsed().as_secs_f64());
    let ck = outcome.checkpoint;
    ck.save(&ck_path)?;

    let metrics = StepMetrics::read_csv(&metrics_path)?;
    let epochs = epoch_summaries(&metrics)?;
    let (first, last) = (&epochs[0], &epochs[epochs.len() - 1]);
    let before = mean_psnr(&samples, &initial)?;
    let after = mean_psnr(&samples, &ck)?;
    let psnr_delta = before
        .iter()
        .map(|(k, &(n, b))| {
            let a = after[k].1;
            (
                k.clone(),
                PsnrDelta {
                    count: n,
                    before: b,
                    after: a,
                    delta: a - b,
                },
            )
        })
        .collect();
    let summary = TrainSummary {
        seed: cfg.seed,
        judge: rewards.judge().name().to_string(),
        mock_judge: rewards.judge().is_mock(),
        train_samples: samples.len(),
        epochs: ck.epoch,
        steps: ck.step,
        resumed: resume,
        first_epoch_reward_mean: first.mean.reward_mean,
        last_epoch_reward_mean: last.mean.reward_mean,
        first_epoch_total_loss: first.mean.total_loss,
        last_epoch_total_loss: last.mean.total_loss,
        expected_reward_before: expected_reward(
            &samples,
            &initial.policy,
            &initial.backbone,
            &rewards,
            cfg.eval_draws,
            cfg.seed,
        )?,
        expected_reward_after: expected_reward(&samples, &ck.policy, &ck.backbone, &rewards, cfg.eval_draws, cfg.seed)?,
        eval_draws: cfg.eval_draws,
        psnr_delta,
    };
    write_json(&out.join(TRAIN_SUMMARY_FILE), &summary)?;
    println!(
        "trained {} epochs ({} steps) on {} samples; expected reward {:.4} -> {:.4}; judge {}",
        summary.epochs,
        summary.steps,
        summary.train_samples,
        summary.expected_reward_before,
        summary.expected_reward_after,
        if summary.mock_judge { "mock" } else { "remote" }
    );
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize)]
struct EvalScores {
    count: usize,
    psnr: f64,
    ssim: f64,
    combined: f64,
    r_gen: f64,
    r_qwen: f64,
    r_task: f64,
}

impl EvalScores {
    const HEADER: &'static str = "scope,count,psnr,ssim,combined,r_gen,r_qwen,r_task";

    fn to_array(&self) -> [f64; 6] {
        [self.psnr, self.ssim, self.combined, self.r_gen, self.r_qwen, self.r_task]
    }

    fn from_array(count: usize, v: [f64; 6]) -> Self {
        Self {
            count,
            psnr: v[0],
            ssim: v[1],
            combined: v[2],
            r_gen: v[3],
            r_qwen: v[4],
            r_task: v[5],
        }
    }

    fn mean(rows: &[&EvalScores]) -> Self {
        let n = rows.len() as f64;
        let sum = rows.iter().fold([0.0; 6], |mut acc, r| {
            acc.iter_mut().zip(r.to_array()).for_each(|(a, v)| *a += v);
            acc
        });
        Self::from_array(rows.iter().map(|r| r.count).sum(), sum.map(|s| s / n))
    }

    fn csv_row(&self, scope: &str) -> String {
        let vals: Vec<String> = self.to_array().iter().map(|v| v.to_string()).collect();
        format!("{scope},{},{}", self.count, vals.join(","))
    }
}

#[derive(Serialize)]
struct EvalRecord {
    id: String,
    family: String,
    baseline_reward: Option<f64>,
    judge_fallback: bool,
    #[serde(flatten)]
    scores: EvalScores,
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint_epoch: usize,
    checkpoint_step: u64,
    judge: String,
    /// Records outside the hard subset.
    held_out: usize,
    records: Vec<EvalRecord>,
    per_kind: BTreeMap<String, EvalScores>,
    /// Unweighted mean of the per-kind values.
    average: EvalScores,
}

pub fn eval(args: &ConfigArgs, corpus: Option<PathBuf>, checkpoint: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = args.resolve()?;
    let corpus = required(corpus, &cfg.corpus_dir, "corpus")?;
    let manifest = load_manifest(&corpus)?;
    if !checkpoint.is_file() {
        return Err(CliError::User(format!("no checkpoint at {}", checkpoint.display())));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let out = match out {
        Some(o) => o,
        None => checkpoint.parent().unwrap_or(Path::new(".")).join("eval"),
    };
    let held: Vec<_> = manifest.held_out().cloned().collect();
    if held.is_empty() {
        return Err(CliError::User("no held-out records: every record is in the hard subset".into()));
    }
    let rewards = reward_model(args, &cfg)?;
    let mut records = Vec::with_capacity(held.len());
    for rec in &held {
        let s = Sample::load(&corpus, rec)?;
        let y = restore_deterministic(&s.degraded, &ck.backbone, &ck.policy)?.clamped();
        let r = rewards.score(s.kind, &s.degraded, &y, &s.truth)?;
        records.push(EvalRecord {
            id: s.id.clone(),
            family: s.kind.family().to_string(),
            baseline_reward: rec.baseline_reward,
            judge_fallback: r.judge_fallback,
            scores: EvalScores {
                count: 1,
                psnr: psnr(&y, &s.truth)?,
                ssim: ssim(&y, &s.truth)?,
                combined: r.combined,
                r_gen: r.r_gen,
                r_qwen: r.r_qwen,
                r_task: r.r_task,
            },
        });
    }
    let mut per_kind = BTreeMap::new();
    for family in manifest.per_kind_counts.keys() {
        let rows: Vec<&EvalScores> = records.iter().filter(|r| &r.family == family).map(|r| &r.scores).collect();
        if !rows.is_empty() {
            per_kind.insert(family.clone(), EvalScores::mean(&rows));
        }
    }
    let kinds: Vec<&EvalScores> = per_kind.values().collect();
    let average = EvalScores::mean(&kinds);
    let report = EvalReport {
        checkpoint_epoch: ck.epoch,
        checkpoint_step: ck.step,
        judge: rewards.judge().name().to_string(),
        held_out: records.len(),
        records,
        per_kind,
        average,
    };
    fs::create_dir_all(&out).map_err(restorl::Error::from)?;
    cfg.echo(&out)?;
    write_json(&out.join(EVAL_JSON_FILE), &report)?;
    let mut csv = vec![EvalScores::HEADER.to_string()];
    csv.extend(report.per_kind.iter().map(|(k, s)| s.csv_row(k)));
    csv.push(report.average.csv_row("average"));
    fs::write(out.join(EVAL_CSV_FILE), csv.join("\n") + "\n").map_err(restorl::Error::from)?;
    println!(
        "held-out {} records: psnr {:.3} dB, ssim {:.4}, reward {:.4}",
        report.held_out, report.average.psnr, report.average.ssim, report.average.combined
    );
    Ok(())
}

#[derive(Serialize)]
struct Series {
    epoch: Vec<usize>,
    steps: Vec<usize>,
    reward_mean: Vec<f64>,
    reward_std: Vec<f64>,
    total_loss_mean: Vec<f64>,
    total_loss_std: Vec<f64>,
    summaries: Vec<EpochSummary>,
}

pub fn report(metrics: &Path, out: &Path) -> CliResult<()> {
    if !metrics.is_file() {
        return Err(CliError::User(format!("no metrics log at {}", metrics.display())));
    }
    let rows = StepMetrics::read_csv(metrics)?;
    let summaries = epoch_summaries(&rows)?;
    fs::create_dir_all(out).map_err(restorl::Error::from)?;
    write_summary_csv(&out.join(REPORT_CSV_FILE), &summaries)?;
    let series = Series {
        epoch: summaries.iter().map(|s| s.epoch).collect(),
        steps: summaries.iter().map(|s| s.steps).collect(),
        reward_mean: summaries.iter().map(|s| s.mean.reward_mean).collect(),
        reward_std: summaries.iter().map(|s| s.std.reward_mean).collect(),
        total_loss_mean: summaries.iter().map(|s| s.mean.total_loss).collect(),
        total_loss_std: summaries.iter().map(|s| s.std.total_loss).collect(),
        summaries,
    };
    write_json(&out.join(REPORT_JSON_FILE), &series)?;
    println!("{} epochs from {} steps", series.epoch.len(), rows.len());
    Ok(())
}

#[derive(Serialize)]
struct JudgeDiagnostics {
    judge: String,
    endpoint: Option<String>,
    sample: String,
    psnr: f64,
    elapsed_ms: u128,
    verdict: restorl::judge::JudgeVerdict,
}

pub fn judge(args: &ConfigArgs, corpus: Option<PathBuf>, id: Option<String>, prompt: bool) -> CliResult<()> {
    if prompt {
        print!("{}", build_prompt());
        return Ok(());
    }
    let cfg = args.resolve()?;
    let sample = match (corpus, id) {
        (Some(corpus), Some(id)) => {
            let manifest = load_manifest(&corpus)?;
            let rec = manifest
                .records
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| CliError::User(format!("no record `{id}` in {}", corpus.display())))?;
            Sample::load(&corpus, rec)?
        }
        _ => synth_samples(1, 32, cfg.seed, &cfg.degradations())?.remove(0),
    };
    let judge = judge_for(args, &cfg);
    let endpoint = args.judge_endpoint.clone().or_else(|| cfg.effective_endpoint());
    let started = Instant::now();
    let verdict = judge.judge(&sample.degraded, &sample.degraded, &sample.truth);
    let diag = JudgeDiagnostics {
        judge: judge.name().to_string(),
        endpoint: if judge.is_mock() { None } else { endpoint },
        sample: sample.id.clone(),
        psnr: psnr(&sample.degraded, &sample.truth)?,
        elapsed_ms: started.elapsed().as_millis(),
        verdict,
    };
    println!("{}", serde_json::to_string_pretty(&diag).map_err(restorl::Error::from)?);
    Ok(())
}
