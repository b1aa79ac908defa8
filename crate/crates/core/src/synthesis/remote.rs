//! HTTP client for an external synthesis service.
//!
//! `POST /v1/synthesize` with `{"image_png_b64", "t_from_tilde", "seed"}`,
//! answered by `{"image_png_b64"}`; failures come back as 4xx/5xx with
//! `{"error"}`. `GET /v1/health` answers `{"status":"ok","backend":..}`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BackendKind, SynthError, SynthErrorKind, SynthRequest, Synthesizer, SynthesizerId};
use crate::raster::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_in_flight() -> usize {
    8
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    200
}
fn default_timeout_ms() -> u64 {
    30_000
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            max_in_flight: default_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            timeout_ms: default_timeout_ms(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub image_png_b64: String,
    pub t_from_tilde: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub image_png_b64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireError {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub backend: String,
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteSynth {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
}

enum Attempt {
    Transport(String),
    Final(SynthError),
}

impl RemoteSynth {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        let slots = Slots {
            free: Mutex::new(cfg.max_in_flight.max(1)),
            cv: Condvar::new(),
        };
        RemoteSynth { cfg, agent, slots }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.cfg.endpoint.trim_end_matches('/'))
    }

    pub fn health(&self) -> Result<Health, SynthError> {
        let unavailable = |e: ureq::Error| SynthError::new(SynthErrorKind::Unavailable, e.to_string());
        let mut resp = self.agent.get(&self.url("/v1/health")).call().map_err(unavailable)?;
        if !resp.status().is_success() {
            return Err(SynthError::new(
                SynthErrorKind::Unavailable,
                format!("health check returned {}", resp.status()),
            ));
        }
        let h: Health = resp
            .body_mut()
            .read_json()
            .map_err(|e| SynthError::new(SynthErrorKind::MalformedResponse, e.to_string()))?;
        if h.status != "ok" {
            return Err(SynthError::new(SynthErrorKind::Unavailable, format!("service status {}", h.status)));
        }
        Ok(h)
    }

    fn attempt(&self, body: &WireRequest) -> Result<Image, Attempt> {
        let malformed = |m: String| Attempt::Final(SynthError::new(SynthErrorKind::MalformedResponse, m));
        let mut resp = self
            .agent
            .post(&self.url("/v1/synthesize"))
            .send_json(body)
            .map_err(|e| Attempt::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Transport(e.to_string()))?;
        if !status.is_success() {
            let msg = serde_json::from_str::<WireError>(&text)
                .map(|e| e.error)
                .unwrap_or_else(|_| text.clone());
            let kind = if status.is_server_error() {
                SynthErrorKind::Unavailable
            } else {
                SynthErrorKind::MalformedResponse
            };
            return Err(Attempt::Final(SynthError::new(kind, format!("HTTP {status}: {msg}"))));
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        let bytes = B64.decode(parsed.image_png_b64).map_err(|e| malformed(e.to_string()))?;
        Image::decode_png(&bytes).map_err(|e| malformed(e.to_string()))
    }
}

pub fn encode_request(req: &SynthRequest<'_>) -> Result<WireRequest, SynthError> {
    let png = req
        .image
        .encode_png()
        .map_err(|e| SynthError::new(SynthErrorKind::DimensionMismatch, e.to_string()))?;
    Ok(WireRequest {
        image_png_b64: B64.encode(png),
        t_from_tilde: req.t_from_tilde.to_matrix().iter().flatten().copied().collect(),
        seed: req.seed,
    })
}

impl Synthesizer for RemoteSynth {
    fn id(&self) -> SynthesizerId {
        SynthesizerId {
            kind: BackendKind::Remote,
            version: format!("v1@{}", self.cfg.endpoint),
        }
    }

    fn synthesize(&self, req: &SynthRequest<'_>) -> Result<Image, SynthError> {
        let body = encode_request(req)?;
        let _slot = self.slots.acquire();
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                log::warn!("synthesis request failed ({last}); retry {attempt} in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(img) => {
                    if img.dims() != req.image.dims() {
                        return Err(SynthError::new(
                            SynthErrorKind::DimensionMismatch,
                            format!(
                                "sent {}x{}, received {}x{}",
                                req.image.width(),
                                req.image.height(),
                                img.width(),
                                img.height()
                            ),
                        ));
                    }
                    return Ok(img);
                }
                Err(Attempt::Final(e)) => return Err(e),
                Err(Attempt::Transport(m)) => last = m,
            }
        }
        Err(SynthError::new(
            SynthErrorKind::Unavailable,
            format!("{} after {} retries", last, self.cfg.retries),
        ))
    }
}
