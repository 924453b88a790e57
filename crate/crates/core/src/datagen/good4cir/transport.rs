//! LLM transports: live gateway, fixture playback, recording, retry.
//!
//! Fixture directory layout:
//!
//! ```text
//! <dir>/pairs.json               list of {pair_id, query_image, target_image}
//! <dir>/grids.bin                optional image grids for the referenced ids
//! <dir>/responses/<sha256>.json  {"request": <request>, "response": "<raw text>"}
//! ```
//!
//! The key is the sha256 of the request's canonical JSON (keys sorted, no
//! whitespace).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ENV_URL: &str = "CIR_LLM_URL";
pub const ENV_TOKEN: &str = "CIR_LLM_TOKEN";
pub const ENV_MODEL: &str = "CIR_LLM_MODEL";

/// One structured-output request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub stage: u8,
    pub prompt: String,
    /// Image reference (id or path) the prompt is about, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl LlmRequest {
    pub fn canonical(&self) -> String {
        // serde_json maps are ordered by key, so a round-trip through Value
        // sorts them.
        let v = serde_json::to_value(self).expect("request serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn key(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub trait Transport: Send + Sync {
    /// Raw response text for `req`.
    fn complete(&self, req: &LlmRequest) -> Result<String>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        (**self).complete(req)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        (**self).complete(req)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FixtureFile {
    request: LlmRequest,
    response: String,
}

/// Replays recorded responses; an unrecorded request is a transport error.
#[derive(Clone, Debug)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        if !dir.join("responses").is_dir() {
            return Err(Error::Transport(format!(
                "{}: no responses/ fixture directory",
                dir.display()
            )));
        }
        Ok(Self { dir })
    }

    pub fn path_for(dir: &Path, req: &LlmRequest) -> PathBuf {
        dir.join("responses").join(format!("{}.json", req.key()))
    }
}

impl Transport for FixtureTransport {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let p = Self::path_for(&self.dir, req);
        let text = fs::read_to_string(&p)
            .map_err(|_| Error::Transport(format!("no fixture for stage {} request {}", req.stage, req.key())))?;
        let f: FixtureFile = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        if f.request != *req {
            return Err(Error::Format(format!(
                "{}: stored request does not match its key",
                p.display()
            )));
        }
        Ok(f.response)
    }
}

/// Forwards to `inner` and writes every exchange as a fixture file.
pub struct RecordingTransport<T> {
    pub inner: T,
    dir: PathBuf,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let r = dir.join("responses");
        fs::create_dir_all(&r).map_err(|e| Error::io(&r, e))?;
        Ok(Self { inner, dir })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let response = self.inner.complete(req)?;
        let p = FixtureTransport::path_for(&self.dir, req);
        let f = FixtureFile {
            request: req.clone(),
            response: response.clone(),
        };
        let body = serde_json::to_string_pretty(&f).expect("fixture serializes") + "\n";
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(response)
    }
}

/// Retries transport failures with linear backoff; other errors pass through.
pub struct Retry<T> {
    pub inner: T,
    pub attempts: usize,
    pub backoff: Duration,
}

impl<T: Transport> Retry<T> {
    pub fn new(inner: T, attempts: usize, backoff: Duration) -> Self {
        Self {
            inner,
            attempts: attempts.max(1),
            backoff,
        }
    }
}

impl<T: Transport> Transport for Retry<T> {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let mut last = None;
        for i in 0..self.attempts {
            match self.inner.complete(req) {
                Err(Error::Transport(msg)) => {
                    log::warn!("stage {} attempt {} failed: {msg}", req.stage, i + 1);
                    last = Some(msg);
                    if i + 1 < self.attempts {
                        std::thread::sleep(self.backoff * (i as u32 + 1));
                    }
                }
                other => return other,
            }
        }
        Err(Error::Transport(format!(
            "gave up after {} attempts: {}",
            self.attempts,
            last.unwrap_or_default()
        )))
    }
}

/// OpenAI-style chat-completions gateway. Images given as file paths are
/// inlined as base64 data URLs; other references are passed as text.
pub struct GatewayTransport {
    url: String,
    token: String,
    model: String,
    agent: ureq::Agent,
    min_interval: Duration,
    last_call: Mutex<Option<Instant>>,
}

const SYSTEM_PROMPT: &str =
    "You describe images for a retrieval dataset. Answer with a single JSON object and nothing else.";

impl GatewayTransport {
    pub fn new(url: String, token: String, model: String, min_interval: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            url,
            token,
            model,
            agent,
            min_interval,
            last_call: Mutex::new(None),
        }
    }

    pub fn from_env() -> Result<Self> {
        let get = |k: &str| std::env::var(k).map_err(|_| Error::Config(format!("environment variable {k} is not set")));
        Ok(Self::new(
            get(ENV_URL)?,
            get(ENV_TOKEN)?,
            get(ENV_MODEL)?,
            Duration::from_millis(500),
        ))
    }

    fn throttle(&self) {
        let mut last = self.last_call.lock().expect("rate limiter lock");
        if let Some(t) = *last {
            let wait = self.min_interval.saturating_sub(t.elapsed());
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        *last = Some(Instant::now());
    }

    fn content(&self, req: &LlmRequest) -> Result<serde_json::Value> {
        let mut parts = vec![serde_json::json!({"type": "text", "text": req.prompt})];
        if let Some(img) = &req.image {
            let p = Path::new(img);
            if p.is_file() {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                let mime = match p.extension().and_then(|e| e.to_str()) {
                    Some("jpg" | "jpeg") => "image/jpeg",
                    _ => "image/png",
                };
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                parts.push(
                    serde_json::json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{b64}")}}),
                );
            } else {
                parts.push(serde_json::json!({"type": "text", "text": format!("image: {img}")}));
            }
        }
        Ok(serde_json::Value::Array(parts))
    }
}

impl Transport for GatewayTransport {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": self.content(req)?},
            ],
        });
        self.throttle();
        let v: serde_json::Value = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| Error::Transport(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Schema {
                reason: "gateway reply has no message content".into(),
                raw: v.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        fails: usize,
        calls: AtomicUsize,
    }

    impl Transport for Flaky {
        fn complete(&self, _: &LlmRequest) -> Result<String> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fails {
                Err(Error::Transport("down".into()))
            } else {
                Ok("{}".into())
            }
        }
    }

    fn req() -> LlmRequest {
        LlmRequest {
            stage: 1,
            prompt: "list".into(),
            image: Some("a".into()),
        }
    }

    #[test]
    fn retry_recovers_then_gives_up() {
        let t = Retry::new(
            Flaky {
                fails: 2,
                calls: AtomicUsize::new(0),
            },
            3,
            Duration::ZERO,
        );
        assert_eq!(t.complete(&req()).unwrap(), "{}");
        let t = Retry::new(
            Flaky {
                fails: 5,
                calls: AtomicUsize::new(0),
            },
            3,
            Duration::ZERO,
        );
        assert!(matches!(t.complete(&req()), Err(Error::Transport(_))));
        assert_eq!(t.inner.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn canonical_key_is_stable() {
        assert_eq!(req().canonical(), r#"{"image":"a","prompt":"list","stage":1}"#);
        assert_eq!(req().key().len(), 64);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RecordingTransport::new(
            Flaky {
                fails: 0,
                calls: AtomicUsize::new(0),
            },
            dir.path(),
        )
        .unwrap();
        rec.complete(&req()).unwrap();
        let play = FixtureTransport::new(dir.path()).unwrap();
        assert_eq!(play.complete(&req()).unwrap(), "{}");
        let other = LlmRequest { stage: 2, ..req() };
        assert!(matches!(play.complete(&other), Err(Error::Transport(_))));
    }
}
