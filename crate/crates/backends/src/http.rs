//! Blocking HTTP client for `POST /v1/detect`, `/v1/caption` and `/v1/align`.
//!
//! Bodies are canonical v1 JSON in both directions. Transport failures and
//! 5xx/429 answers are retried with exponential backoff; schema violations
//! are not.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::contract::{AlignerBackend, Captioner, Detector};
use crate::error::{BackendError, Result};
use crate::wire::{
    parse_record, to_canonical, AlignRequest, AlignResponse, CaptionRequest, CaptionResponse, DetectorRequest,
    DetectorResponse, RecordKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// e.g. `http://127.0.0.1:8080`; endpoint paths are appended.
    pub base_url: String,
    pub timeout_secs: f64,
    pub retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_secs: 60.0,
            retries: 2,
            backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|e| e.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
}

enum Attempt {
    Retry(String),
    Fail(BackendError),
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self> {
        if !cfg.base_url.starts_with("http://") {
            return Err(BackendError::protocol("base_url", "only plain http:// endpoints are supported"));
        }
        if !(cfg.timeout_secs > 0.0 && cfg.timeout_secs.is_finite()) || cfg.max_in_flight == 0 {
            return Err(BackendError::protocol("http", "timeout and in-flight limit must be positive"));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Gate {
            used: Mutex::new(0),
            freed: Condvar::new(),
            limit: cfg.max_in_flight,
        };
        Ok(Self { cfg, agent, gate })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn attempt<T: DeserializeOwned>(&self, url: &str, body: &str, kind: RecordKind) -> std::result::Result<T, Attempt> {
        let _permit = self.gate.acquire();
        let mut resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(format!("reading body: {}", e)))?;
        match status {
            200..=299 => parse_record(kind, &text).map_err(Attempt::Fail),
            404 => Err(Attempt::Fail(BackendError::NotFound { key: url.to_string() })),
            429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {}", status))),
            _ => Err(Attempt::Fail(BackendError::protocol(
                "$",
                format!("HTTP {}: {}", status, text.chars().take(200).collect::<String>()),
            ))),
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req, kind: RecordKind) -> Result<Resp> {
        let url = format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path);
        let body = to_canonical(req)?;
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&url, &body, kind) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(why)) => {
                    warn!("{} attempt {} failed: {}", url, attempt + 1, why);
                    last = why;
                }
            }
        }
        Err(BackendError::Unavailable {
            backend: "http",
            reason: format!("{} after {} attempts: {}", url, self.cfg.retries + 1, last),
        })
    }
}

impl Detector for HttpBackend {
    fn detect(&self, req: &DetectorRequest) -> Result<DetectorResponse> {
        self.post("/v1/detect", req, RecordKind::DetectorResponse)
    }
}

impl Captioner for HttpBackend {
    fn caption(&self, req: &CaptionRequest) -> Result<CaptionResponse> {
        self.post("/v1/caption", req, RecordKind::CaptionResponse)
    }
}

impl AlignerBackend for HttpBackend {
    fn align(&self, req: &AlignRequest) -> Result<AlignResponse> {
        self.post("/v1/align", req, RecordKind::AlignResponse)
    }
}
