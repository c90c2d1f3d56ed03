//! Expert-judge reward: the verifier prompt, verdict parsing, a
//! deterministic PSNR-based mock and an HTTP client for a hosted
//! vision-language model.

mod http;

use serde::{Deserialize, Serialize};

pub use http::{http_judge, HttpJudge, HttpJudgeConfig, JUDGE_ENDPOINT_ENV};

use crate::imgcore::{psnr, Image};

/// Verifier prompt sent alongside the degraded, restored and reference
/// images.
pub const JUDGE_PROMPT: &str = "\
You are an image-restoration expert. You will be given three images:
1. The degraded input that suffers from a certain type of degradation.
2. The restored output generated by a model.
3. The clean ground-truth reference.

Task:
1. Identify the most plausible degradation type of the input image. Consider categories such as denoising (0/1/2, different noise levels), deraining (3), dehazing (4), deblurring (5), or low-light enhancement (6). Briefly justify your reasoning.
2. Compare the restored output against the ground truth with respect to the identified degradation type. Pay attention to:
   - Noise or streak removal quality for denoising/deraining.
   - Contrast and haze removal for dehazing.
   - Sharpness recovery for deblurring.
   - Exposure and color constancy for low-light enhancement.
3. Highlight specific improvements and any remaining artifacts.
4. Provide a final quality score from 1 to 5, where:
   - 1: severe artifacts or almost no improvement,
   - 2: minor improvement but significant issues remain,
   - 3: moderate improvement with noticeable gaps,
   - 4: strong restoration with only small flaws,
   - 5: near-perfect restoration indistinguishable from ground truth.
Respond in the following XML-style format:
<Assessment>
  <Degradation>
    [type and reasoning]
  </Degradation>
  <Analysis>
    [detailed comparison]
  </Analysis>
  <Score>X</Score>
</Assessment>
";

/// PSNR thresholds (dB) the mock judge counts towards its score.
pub const MOCK_THRESHOLDS_DB: [f64; 4] = [20.0, 25.0, 30.0, 35.0];

pub fn build_prompt() -> String {
    JUDGE_PROMPT.to_string()
}

/// The three images a judge sees, plus the prompt.
#[derive(Clone, Debug)]
pub struct JudgeRequest {
    pub degraded: Image,
    pub restored: Image,
    pub reference: Image,
    pub prompt: String,
}

impl JudgeRequest {
    pub fn new(degraded: &Image, restored: &Image, reference: &Image) -> Self {
        Self {
            degraded: degraded.clone(),
            restored: restored.clone(),
            reference: reference.clone(),
            prompt: build_prompt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    /// Degradation index 0–6, or -1 when the response names none.
    pub degradation_label: i32,
    pub analysis: String,
    /// Raw 1–5 score.
    pub score: u8,
    /// `(score − 1) / 4`.
    pub rescaled: f64,
    /// True when the verdict came from the mock after the remote judge
    /// failed.
    pub fallback: bool,
}

impl JudgeVerdict {
    pub fn from_score(score: u8, degradation_label: i32, analysis: impl Into<String>) -> Self {
        debug_assert!((1..=5).contains(&score));
        Self {
            degradation_label,
            analysis: analysis.into(),
            score,
            rescaled: (score as f64 - 1.0) / 4.0,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerdictError {
    #[error("unparseable judge response: {0}")]
    Parse(String),
    #[error("judge score {0} outside 1..=5")]
    Range(i64),
}

fn tag_body<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(&text[start..end])
}

fn parse_label(block: &str) -> i32 {
    let numeric = block
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .filter_map(|t| t.parse::<i32>().ok())
        .find(|n| (0..=6).contains(n));
    if let Some(n) = numeric {
        return n;
    }
    let lower = block.to_ascii_lowercase();
    [("derain", 3), ("dehaz", 4), ("deblur", 5), ("low-light", 6), ("low light", 6)]
        .iter()
        .find(|(k, _)| lower.contains(k))
        .map_or(-1, |(_, n)| *n)
}

/// Extracts the first `<Score>` integer and, when present, the degradation
/// label and analysis text.
pub fn parse_verdict(response: &str) -> Result<JudgeVerdict, VerdictError> {
    let body = tag_body(response, "Score")
        .ok_or_else(|| VerdictError::Parse("no <Score>...</Score> element".into()))?;
    let score: i64 = body
        .trim()
        .parse()
        .map_err(|_| VerdictError::Parse(format!("score `{}` is not an integer", body.trim())))?;
    if !(1..=5).contains(&score) {
        return Err(VerdictError::Range(score));
    }
    let label = tag_body(response, "Degradation").map_or(-1, parse_label);
    let analysis = tag_body(response, "Analysis").map_or("", str::trim);
    Ok(JudgeVerdict::from_score(score as u8, label, analysis))
}

/// Embeds a verdict in the response schema the prompt requests.
pub fn render_response(degradation_label: i32, analysis: &str, score: u8) -> String {
    let label = if (0..=6).contains(&degradation_label) {
        format!("type {degradation_label}")
    } else {
        "unknown".to_string()
    };
    format!(
        "<Assessment>\n  <Degradation>\n    {label}\n  </Degradation>\n  <Analysis>\n    {analysis}\n  </Analysis>\n  <Score>{score}</Score>\n</Assessment>\n"
    )
}

/// Scores restorations on the 1–5 rubric.
pub trait Judge: Send + Sync {
    fn name(&self) -> &str;

    /// Never fails; remote judges fall back to the mock on error.
    fn judge(&self, degraded: &Image, restored: &Image, reference: &Image) -> JudgeVerdict;

    fn is_mock(&self) -> bool {
        false
    }
}

/// `1 + #{thresholds ≤ psnr(y, t)}`.
pub fn mock_judge(y: &Image, t: &Image) -> JudgeVerdict {
    let p = psnr(y, t).unwrap_or(0.0);
    let score = 1 + MOCK_THRESHOLDS_DB.iter().filter(|&&th| p >= th).count() as u8;
    JudgeVerdict::from_score(score, -1, format!("mock judge: psnr {p:.3} dB"))
}

/// Deterministic stand-in for a vision-language judge.
#[derive(Clone, Copy, Debug, Default)]
pub struct MockJudge;

impl Judge for MockJudge {
    fn name(&self) -> &str {
        "mock"
    }

    fn judge(&self, _degraded: &Image, restored: &Image, reference: &Image) -> JudgeVerdict {
        mock_judge(restored, reference)
    }

    fn is_mock(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prompt_contents() {
        let p = build_prompt();
        assert!(p.starts_with("You are an image-restoration expert."));
        assert!(p.contains("near-perfect restoration indistinguishable from ground truth"));
        assert!(p.contains("<Score>X</Score>"));
        assert!(p.contains("deraining (3), dehazing (4)"));
    }

    #[test]
    fn parse_examples() {
        let v = parse_verdict("<Assessment>…<Score>4</Score></Assessment>").unwrap();
        assert_eq!((v.score, v.rescaled, v.degradation_label), (4, 0.75, -1));
        assert_eq!(parse_verdict("<Score>6</Score>"), Err(VerdictError::Range(6)));
        assert_eq!(parse_verdict("<Score>0</Score>"), Err(VerdictError::Range(0)));
        assert!(matches!(parse_verdict("I'd give it a 4."), Err(VerdictError::Parse(_))));
        assert!(matches!(parse_verdict("<Score>four</Score>"), Err(VerdictError::Parse(_))));
        assert!(matches!(parse_verdict("<Score>4"), Err(VerdictError::Parse(_))));
    }

    #[test]
    fn first_score_wins() {
        let v = parse_verdict("<Score> 2 </Score> later <Score>5</Score>").unwrap();
        assert_eq!(v.score, 2);
    }

    #[test]
    fn label_from_keywords() {
        let r = "<Degradation>Looks like heavy haze, dehazing.</Degradation><Score>3</Score>";
        assert_eq!(parse_verdict(r).unwrap().degradation_label, 4);
        let r = "<Degradation>denoising (2), strong noise</Degradation><Score>3</Score>";
        assert_eq!(parse_verdict(r).unwrap().degradation_label, 2);
    }

    #[test]
    fn mock_thresholds() {
        let t = Image::from_fn(16, 16, 3, |y, x, _| ((x + y) % 5) as f64 / 5.0).unwrap();
        let v = mock_judge(&t, &t);
        assert_eq!((v.score, v.rescaled), (5, 1.0));
        // uniform offset d gives psnr = -20 log10 d
        let at = |db: f64| t.map(move |v| v + 10f64.powf(-db / 20.0));
        let v = mock_judge(&at(22.0), &t);
        assert_eq!((v.score, v.rescaled), (2, 0.25));
        let v = mock_judge(&at(12.0), &t);
        assert_eq!((v.score, v.rescaled), (1, 0.0));
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(label in -1i32..=6, score in 1u8..=5, analysis in "[a-zA-Z ,.]{0,40}") {
            let v = parse_verdict(&render_response(label, &analysis, score)).unwrap();
            prop_assert_eq!(v.degradation_label, label);
            prop_assert_eq!(v.score, score);
            prop_assert_eq!(v.analysis, analysis.trim());
        }

        #[test]
        fn rescaled_on_quarter_grid(score in 1u8..=5) {
            let v = JudgeVerdict::from_score(score, -1, "");
            prop_assert!([0.0, 0.25, 0.5, 0.75, 1.0].contains(&v.rescaled));
        }

        #[test]
        fn mock_monotone_in_psnr(d1 in 0.001f64..0.3, d2 in 0.001f64..0.3) {
            let t = Image::filled(8, 8, 1, 0.5).unwrap();
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            // smaller offset, higher PSNR
            let better = mock_judge(&t.map(|v| v + lo), &t).score;
            let worse = mock_judge(&t.map(|v| v + hi), &t).score;
            prop_assert!(better >= worse);
        }
    }
}
