//! End-to-end acceptance checks. Runs every criterion, prints one line per
//! criterion and exits non-zero if any fails.

mod common;

use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use common::{
    check_backbone_l1, check_entropy_grads, check_logprob_grads, check_policy_chain, check_total_loss,
    random_image, rng, silent_server, smoke_run, stub_server,
};
use restorl::config::RunConfig;
use restorl::data::{gen_clean, hard_count, mine_hard, MiningMode, SampleRecord};
use restorl::grpo::{advantages, anneal, best_index, kl_terms, surrogate_terms, TrainConfig};
use restorl::judge::{build_prompt, http_judge, mock_judge, parse_verdict, JudgeRequest, VerdictError};
use restorl::policy::{beta_ln_pdf, entropy, joint_logprob, Action, BetaHeadOutput, ACTION_DIM};
use restorl::rewards::{r_grad, r_task, DegradationKind, RewardModel};
use restorl::Image;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Tanh-sinh quadrature on (0, 1). `f` receives `(x, ln x, ln(1 − x))`,
/// the logs computed without cancellation near either end.
fn tanh_sinh(f: impl Fn(f64, f64, f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let mut sum = 0.0;
    for k in -320i32..=320 {
        let t = k as f64 * h;
        let u = FRAC_PI_2 * t.sinh();
        let ln_x = -softplus(-2.0 * u);
        let ln_1mx = -softplus(2.0 * u);
        let x = ln_x.exp();
        if x <= 0.0 || x >= 1.0 {
            continue;
        }
        let w = 0.5 * FRAC_PI_2 * t.cosh() / u.cosh().powi(2);
        sum += h * w * f(x, ln_x, ln_1mx);
    }
    sum
}

fn ln_beta_oracle(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut worst_norm, mut worst_h) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let out = BetaHeadOutput {
            alpha: std::array::from_fn(|_| r.random_range(0.5..20.0)),
            beta: std::array::from_fn(|_| r.random_range(0.5..20.0)),
        };
        for k in 0..ACTION_DIM {
            let (a, b) = (out.alpha[k], out.beta[k]);
            let mass = tanh_sinh(|x, _, _| beta_ln_pdf(x, a, b).exp());
            worst_norm = worst_norm.max((mass - 1.0).abs());
        }
        // the joint density factorizes over the four controls
        let act = Action::clamped(std::array::from_fn(|_| r.random_range(0.01..0.99)));
        let v = act.to_array();
        let sum: f64 = (0..ACTION_DIM).map(|k| beta_ln_pdf(v[k], out.alpha[k], out.beta[k])).sum();
        let joint = joint_logprob(&out, &act).map_err(|e| e.to_string())?;
        ensure((joint - sum).abs() <= 1e-9 * sum.abs().max(1.0), || {
            format!("joint log-prob {joint} != sum of marginals {sum}")
        })?;
        let h_oracle: f64 = (0..ACTION_DIM)
            .map(|k| {
                let (a, b) = (out.alpha[k], out.beta[k]);
                let lnb = ln_beta_oracle(a, b);
                tanh_sinh(|_, lx, l1x| {
                    let lp = (a - 1.0) * lx + (b - 1.0) * l1x - lnb;
                    -lp.exp() * lp
                })
            })
            .sum();
        worst_h = worst_h.max((entropy(&out) - h_oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst_norm <= 1e-6, || format!("normalization off by {worst_norm:e}"))?;
    ensure(worst_h <= 1e-4, || format!("entropy off by {worst_h:e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("max |∫p − 1| = {worst_norm:.1e}, max entropy error = {worst_h:.1e}, {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let n = 30;
    check_logprob_grads(n).map_err(|e| format!("log-prob: {e}"))?;
    check_entropy_grads(n).map_err(|e| format!("entropy: {e}"))?;
    check_policy_chain(n).map_err(|e| format!("policy chain: {e}"))?;
    check_backbone_l1(n).map_err(|e| format!("backbone: {e}"))?;
    check_total_loss(n).map_err(|e| format!("total loss: {e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("5 gradient families × {n} instances, {secs:.2}s"))
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let clip = 0.2;
    for case in 0..500 {
        let g = r.random_range(2..=8);
        let rewards: Vec<f64> = (0..g).map(|_| r.random_range(0.0..1.0)).collect();
        let adv = advantages(&rewards, 1e-8);
        let mean = adv.iter().sum::<f64>() / g as f64;
        ensure(mean.abs() <= 1e-9, || format!("case {case}: advantage mean {mean:e}"))?;
        let (scale, shift) = (r.random_range(0.1..10.0), r.random_range(-5.0..5.0));
        let moved: Vec<f64> = rewards.iter().map(|x| scale * x + shift).collect();
        ensure(best_index(&moved) == best_index(&rewards), || format!("case {case}: argmax moved"))?;

        let lp_old: Vec<f64> = (0..g).map(|_| r.random_range(-6.0..2.0)).collect();
        let at_old = surrogate_terms(&lp_old, &lp_old, &adv, clip).map_err(|e| e.to_string())?;
        ensure(at_old.value.abs() <= 1e-12, || format!("case {case}: surrogate at θ_old = {:e}", at_old.value))?;
        let lp: Vec<f64> = lp_old.iter().map(|l| l + r.random_range(-0.5..0.5)).collect();
        let (kl, _) = kl_terms(&lp, &lp_old, &lp);
        ensure(kl == 0.0, || format!("case {case}: KL at θ_ref = {kl:e}"))?;

        let s = surrogate_terms(&lp, &lp_old, &adv, clip).map_err(|e| e.to_string())?;
        for i in 0..g {
            let rho = (lp[i] - lp_old[i]).exp();
            let flat = (adv[i] > 0.0 && rho > 1.0 + clip) || (adv[i] < 0.0 && rho < 1.0 - clip);
            let expected = if flat { 0.0 } else { adv[i] * rho / g as f64 };
            ensure((s.d_logprob[i] - expected).abs() <= 1e-12, || {
                format!("case {case}: candidate {i} gradient {} (expected {expected})", s.d_logprob[i])
            })?;
        }
    }
    Ok("500 groups: zero-mean advantages, affine-invariant argmax, zero surrogate/KL, clip regions".into())
}

fn symmetric(img: &Image) -> Image {
    Image::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
        0.5 * (img.get(y, x, c) + img.get(x, y, c))
    })
    .unwrap()
}

fn fuzz_image(r: &mut impl Rng, h: usize, w: usize) -> Image {
    match r.random_range(0..4) {
        0 => random_image(h, w, r),
        1 => Image::filled(h, w, 3, r.random_range(0.0..=1.0)).unwrap(),
        2 => {
            let (a, b) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            Image::from_fn(h, w, 3, |y, x, c| (a * y as f64 / h as f64 + b * x as f64 / w as f64 + 0.1 * c as f64).fract().abs())
                .unwrap()
        }
        _ => Image::from_fn(h, w, 3, |_, _, _| if r.random_bool(0.5) { 0.0 } else { 1.0 }).unwrap(),
    }
}

fn criterion_4() -> Outcome {
    let truths: Vec<Image> = gen_clean(10, 32, 4).map_err(|e| e.to_string())?.iter().map(symmetric).collect();
    for kind in DegradationKind::FAMILIES {
        let want = if kind == DegradationKind::LowLight { 0.3 } else { 1.0 };
        for t in &truths {
            let v = r_task(kind, t, t).map_err(|e| e.to_string())?.value;
            ensure((v - want).abs() <= 1e-4, || format!("{}: r_task(t, t) = {v}", kind.family()))?;
        }
    }

    let model = RewardModel::with_mock_judge();
    let mut r = rng(44);
    for case in 0..1000 {
        let (h, w) = (r.random_range(8..=24), r.random_range(8..=24));
        let (x, y, t) = (fuzz_image(&mut r, h, w), fuzz_image(&mut r, h, w), fuzz_image(&mut r, h, w));
        let kind = DegradationKind::FAMILIES[r.random_range(0..5)];
        let b = model.score(kind, &x, &y, &t).map_err(|e| format!("case {case}: {e}"))?;
        let all = [b.r_gen, b.r_qwen, b.r_task, b.combined]
            .into_iter()
            .chain(b.gen_terms.values().copied())
            .chain(b.task_terms.values().copied());
        for v in all {
            ensure((0.0..=1.0).contains(&v), || format!("case {case}: component {v} outside [0, 1]: {b:?}"))?;
        }
    }

    let clean = gen_clean(20, 32, 45).map_err(|e| e.to_string())?;
    for (seed, t) in clean.iter().enumerate() {
        let mut nr = rng(4500 + seed as u64);
        let noise: Vec<f64> = (0..t.data().len()).map(|_| StandardNormal.sample(&mut nr)).collect();
        let mut prev = f64::INFINITY;
        for sigma in [5.0, 15.0, 25.0, 50.0] {
            let data: Vec<f64> = t.data().iter().zip(&noise).map(|(v, n)| v + sigma / 255.0 * n).collect();
            let y = Image::new(t.height(), t.width(), 3, data).unwrap();
            let g = r_grad(&y, t).map_err(|e| e.to_string())?;
            ensure(g <= prev, || format!("seed {seed}: r_grad rose to {g} at σ = {sigma}"))?;
            prev = g;
        }
    }
    Ok("r_task(t, t) per kind, 1000 fuzzed pairs in [0, 1], r_grad monotone over 20 seeds".into())
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    let counts = [37usize, 41, 40, 43, 39];
    let mut records = Vec::new();
    for (kind, &n) in DegradationKind::FAMILIES.iter().zip(&counts) {
        for i in 0..n {
            // coarse rewards so ties occur
            let reward = (r.random_range(0.0..1.0f64) * 20.0).round() / 20.0;
            records.push(SampleRecord {
                id: format!("{}_{i:04}", kind.family()),
                kind: *kind,
                degraded: Default::default(),
                truth: Default::default(),
                baseline_reward: Some(reward),
                selected: false,
            });
        }
    }
    ensure(records.len() == 200, || "corpus size".into())?;
    let m = mine_hard(records, 0.3, MiningMode::Stratified, 5).map_err(|e| e.to_string())?;
    for (kind, &n) in DegradationKind::FAMILIES.iter().zip(&counts) {
        let family: Vec<&SampleRecord> = m.records.iter().filter(|x| x.kind.family() == kind.family()).collect();
        let sel: Vec<f64> = family.iter().filter(|x| x.selected).map(|x| x.baseline_reward.unwrap()).collect();
        let rest: Vec<f64> = family.iter().filter(|x| !x.selected).map(|x| x.baseline_reward.unwrap()).collect();
        let want = (0.3 * n as f64).ceil() as usize;
        ensure(sel.len() == want && want == hard_count(0.3, n), || {
            format!("{}: {} selected, expected {want}", kind.family(), sel.len())
        })?;
        let max_sel = sel.iter().cloned().fold(f64::MIN, f64::max);
        let min_rest = rest.iter().cloned().fold(f64::MAX, f64::min);
        ensure(max_sel <= min_rest, || format!("{}: selected {max_sel} > unselected {min_rest}", kind.family()))?;
    }
    Ok(format!("per-kind counts {counts:?} → {:?} selected, ordering holds", counts.map(|n| hard_count(0.3, n))))
}

fn criterion_6() -> Outcome {
    let c = TrainConfig::default();
    ensure(c.epochs == 30, || format!("default epochs {}", c.epochs))?;
    let last = c.epochs - 1;
    ensure(c.lambda_sup(0) == 0.35 && c.lambda_sup(last) == 0.1, || "λ_sup endpoints".into())?;
    ensure(c.lambda_cons(0) == 0.2 && c.lambda_cons(last) == 0.05, || "λ_cons endpoints".into())?;
    for e in 1..c.epochs {
        ensure(c.lambda_sup(e) <= c.lambda_sup(e - 1) && c.lambda_cons(e) <= c.lambda_cons(e - 1), || {
            format!("schedule rises at epoch {e}")
        })?;
        let lin = 0.35 + (0.1 - 0.35) * e as f64 / last as f64;
        ensure((anneal(0.35, 0.1, e, c.epochs) - lin).abs() <= 1e-15, || format!("non-linear at epoch {e}"))?;
    }
    for (name, t) in [("train", c.clone()), ("run", RunConfig::default().train_config())] {
        ensure(
            t.group_size == 4
                && t.entropy_weight == 0.01
                && t.learning_rate == 3e-5
                && t.head_lr_multiplier == 6.0
                && t.hard_ratio == 0.3,
            || format!("{name} defaults differ: {t:?}"),
        )?;
    }
    Ok("λ_sup 0.35 → 0.1, λ_cons 0.2 → 0.05 exact; G 4, τ 0.01, lr 3e-5, ×6, ratio 0.3".into())
}

fn criterion_7() -> Outcome {
    let cfg = RunConfig::smoke();
    let start = Instant::now();
    let run = smoke_run(&cfg);
    let secs = start.elapsed().as_secs_f64();
    let steps = run.outcome.metrics.len();
    let gain = run.reward_after - run.reward_before;
    let (first, last) = (run.epoch_loss[0], *run.epoch_loss.last().unwrap());
    let detail = format!(
        "{steps} steps on {} hard samples: reward {:.4} → {:.4} (+{gain:.4}), epoch loss {first:.4} → {last:.4}, {secs:.1}s",
        run.hard.len(),
        run.reward_before,
        run.reward_after
    );
    ensure(steps == 300, || format!("{detail}; expected 300 steps"))?;
    let again = smoke_run(&cfg);
    ensure(
        again.outcome.metrics == run.outcome.metrics && again.outcome.checkpoint == run.outcome.checkpoint,
        || format!("{detail}; rerun differs"),
    )?;
    ensure(gain >= 0.02, || format!("{detail}; reward gain below 0.02"))?;
    ensure(last < first, || format!("{detail}; final epoch loss not below first"))?;
    ensure(secs < 600.0, || format!("{detail}; too slow"))?;
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in 0..3 {
        let final_reward = |g: usize| {
            let cfg = RunConfig {
                seed,
                group_size: g,
                ..RunConfig::smoke()
            };
            smoke_run(&cfg).reward_after
        };
        let (g2, g4) = (final_reward(2), final_reward(4));
        if g4 >= g2 {
            wins += 1;
        }
        rows.push(format!("seed {seed}: G2 {g2:.4} G4 {g4:.4}"));
    }
    let detail = format!("{} ({wins}/3 favour G = 4)", rows.join(", "));
    ensure(wins >= 2, || detail.clone())?;
    Ok(detail)
}

fn criterion_9() -> Outcome {
    let fixture = include_str!("fixtures/judge_prompt.txt");
    ensure(build_prompt().as_bytes() == fixture.as_bytes(), || "prompt differs from fixture".into())?;
    for needle in [
        "near-perfect restoration indistinguishable from ground truth",
        "<Score>X</Score>",
        "deraining (3), dehazing (4)",
    ] {
        ensure(build_prompt().contains(needle), || format!("prompt lacks `{needle}`"))?;
    }

    let v = parse_verdict("<Assessment><Analysis>ok</Analysis><Score>4</Score></Assessment>").map_err(|e| e.to_string())?;
    ensure(v.score == 4 && v.rescaled == 0.75, || format!("parsed {v:?}"))?;
    ensure(matches!(parse_verdict("<Score>6</Score>"), Err(VerdictError::Range(6))), || "score 6 accepted".into())?;
    ensure(matches!(parse_verdict("no tag here"), Err(VerdictError::Parse(_))), || "missing tag accepted".into())?;

    let t = Image::filled(16, 16, 3, 0.5).unwrap();
    let at_psnr = |db: f64| t.map(|v| v + 10f64.powf(-db / 20.0));
    for (y, score, rescaled) in [(t.clone(), 5, 1.0), (at_psnr(22.0), 2, 0.25), (at_psnr(12.0), 1, 0.0)] {
        let v = mock_judge(&y, &t);
        ensure(v.score == score && v.rescaled == rescaled, || format!("mock verdict {v:?}, expected {score}"))?;
    }

    let req = JudgeRequest::new(&t, &at_psnr(22.0), &t);
    let (url, seen) = stub_server("<Assessment><Score>3</Score></Assessment>");
    let v = http_judge(&url, &req, Duration::from_secs(5), 2);
    ensure(v.score == 3 && !v.fallback, || format!("stub verdict {v:?}"))?;
    let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).map_err(|e| e.to_string())?;
    ensure(body["prompt"] == build_prompt() && body["images"].as_array().map(|a| a.len()) == Some(3), || {
        "request body shape".into()
    })?;

    let (url, _) = stub_server("garbage");
    let v = http_judge(&url, &req, Duration::from_secs(5), 1);
    ensure(v.fallback && v.score == 2, || format!("garbage verdict {v:?}"))?;

    let timeout = Duration::from_millis(100);
    let start = Instant::now();
    let v = http_judge(&silent_server(), &req, timeout, 1);
    let took = start.elapsed();
    ensure(v.fallback, || "silent endpoint did not fall back".into())?;
    ensure(took <= 2 * timeout + Duration::from_millis(50), || format!("fallback after {took:?}"))?;
    Ok(format!("fixture match, parse/mock examples, stub roundtrip, fallback after {} ms", took.as_millis()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("closed-form fidelity", criterion_1),
        ("gradient suite", criterion_2),
        ("GRPO algebra", criterion_3),
        ("reward identities", criterion_4),
        ("curation contract", criterion_5),
        ("schedules and defaults", criterion_6),
        ("learning smoke test", criterion_7),
        ("group-size ablation", criterion_8),
        ("judge protocol", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
