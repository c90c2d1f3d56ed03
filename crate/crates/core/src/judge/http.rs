//! HTTP judge client.
//!
//! Wire format: `POST {endpoint}` with
//! `{"prompt": "...", "images": [degraded, restored, reference]}` where each
//! image is a base64-encoded 8-bit PNG. The response body is treated as
//! opaque text and handed to [`parse_verdict`].

use std::sync::mpsc;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::Serialize;

use super::{mock_judge, parse_verdict, Judge, JudgeRequest, JudgeVerdict};
use crate::data::encode_png;
use crate::imgcore::Image;

/// Environment variable read by [`HttpJudgeConfig::from_env`].
pub const JUDGE_ENDPOINT_ENV: &str = "RESTORL_JUDGE_ENDPOINT";

#[derive(Clone, Debug, PartialEq)]
pub struct HttpJudgeConfig {
    pub endpoint: String,
    pub timeout: Duration,
    /// Total attempts before falling back to the mock (at least one).
    pub retries: u32,
}

impl HttpJudgeConfig {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            retries,
        }
    }

    /// Reads the endpoint from [`JUDGE_ENDPOINT_ENV`]; `None` when unset.
    pub fn from_env(timeout: Duration, retries: u32) -> Option<Self> {
        std::env::var(JUDGE_ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .map(|e| Self::new(e, timeout, retries))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    images: [String; 3],
}

fn encode_b64(img: &Image) -> Result<String, String> {
    let png = encode_png(img).map_err(|e| e.to_string())?;
    Ok(base64::engine::general_purpose::STANDARD.encode(png))
}

fn request_body(req: &JudgeRequest) -> Result<String, String> {
    let wire = WireRequest {
        prompt: &req.prompt,
        images: [
            encode_b64(&req.degraded)?,
            encode_b64(&req.restored)?,
            encode_b64(&req.reference)?,
        ],
    };
    serde_json::to_string(&wire).map_err(|e| e.to_string())
}

fn make_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(true)
        .build()
        .into()
}

fn attempt(agent: &ureq::Agent, endpoint: &str, body: &str) -> Result<JudgeVerdict, String> {
    let mut resp = agent
        .post(endpoint)
        .header("Content-Type", "application/json")
        .send(body)
        .map_err(|e| e.to_string())?;
    let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
    parse_verdict(&text).map_err(|e| e.to_string())
}

fn fallback(req: &JudgeRequest, reason: &str) -> JudgeVerdict {
    log::warn!("judge request failed, using mock verdict: {reason}");
    let mut v = mock_judge(&req.restored, &req.reference);
    v.fallback = true;
    v
}

fn run(agent: &ureq::Agent, cfg: &HttpJudgeConfig, req: &JudgeRequest) -> JudgeVerdict {
    let body = match request_body(req) {
        Ok(b) => b,
        Err(e) => return fallback(req, &e),
    };
    let mut last = String::new();
    for n in 1..=cfg.retries.max(1) {
        match attempt(agent, &cfg.endpoint, &body) {
            Ok(v) => return v,
            Err(e) => {
                log::debug!("judge attempt {n} failed: {e}");
                last = e;
            }
        }
    }
    fallback(req, &last)
}

/// One-shot request with a fresh connection. Never fails: exhausting the
/// attempts yields a mock verdict with `fallback` set.
pub fn http_judge(endpoint: &str, req: &JudgeRequest, timeout: Duration, retries: u32) -> JudgeVerdict {
    let cfg = HttpJudgeConfig::new(endpoint, timeout, retries);
    run(&make_agent(timeout), &cfg, req)
}

type Job = (JudgeRequest, mpsc::Sender<JudgeVerdict>);

/// Remote judge. Requests are serialized through a single worker thread
/// that owns the connection; callers block until their verdict arrives.
pub struct HttpJudge {
    cfg: HttpJudgeConfig,
    jobs: Mutex<mpsc::Sender<Job>>,
}

impl HttpJudge {
    pub fn new(cfg: HttpJudgeConfig) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let worker_cfg = cfg.clone();
        thread::spawn(move || {
            let agent = make_agent(worker_cfg.timeout);
            for (req, reply) in rx {
                let _ = reply.send(run(&agent, &worker_cfg, &req));
            }
        });
        Self {
            cfg,
            jobs: Mutex::new(tx),
        }
    }

    pub fn config(&self) -> &HttpJudgeConfig {
        &self.cfg
    }
}

impl Judge for HttpJudge {
    fn name(&self) -> &str {
        "http"
    }

    fn judge(&self, degraded: &Image, restored: &Image, reference: &Image) -> JudgeVerdict {
        let req = JudgeRequest::new(degraded, restored, reference);
        let (tx, rx) = mpsc::channel();
        let sent = self
            .jobs
            .lock()
            .map(|jobs| jobs.send((req.clone(), tx)).is_ok())
            .unwrap_or(false);
        if !sent {
            return fallback(&req, "judge worker unavailable");
        }
        rx.recv()
            .unwrap_or_else(|_| fallback(&req, "judge worker dropped the request"))
    }
}
