use super::{AgentQuery, Backend, BackendError, Reply, Role};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub const API_KEY_ENV: &str = "CONFCRAFT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_connect")]
    pub connect_timeout_secs: f64,
    #[serde(default = "default_total")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Requests-per-minute budget shared by every caller of this client.
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

fn default_key_env() -> String {
    API_KEY_ENV.to_string()
}
fn default_connect() -> f64 {
    10.0
}
fn default_total() -> f64 {
    120.0
}
fn default_retries() -> usize {
    3
}
fn default_backoff() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            connect_timeout_secs: default_connect(),
            timeout_secs: default_total(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff(),
            max_in_flight: default_in_flight(),
            requests_per_minute: None,
        }
    }
}

/// Counting semaphore for in-flight requests.
struct Gate {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("gate poisoned");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("gate poisoned");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("gate poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Client for OpenAI-compatible `/chat/completions` endpoints.
pub struct RemoteBackend {
    name: String,
    cfg: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
    next_slot: Mutex<Instant>,
}

enum Attempt {
    Done(String),
    Retry(BackendError, Option<Duration>),
    Fatal(BackendError),
}

impl RemoteBackend {
    /// Reads the API key from the configured environment variable.
    pub fn new(name: impl Into<String>, cfg: RemoteConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(name, cfg, key)
    }

    pub fn with_key(name: impl Into<String>, cfg: RemoteConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if cfg.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be >= 1".into()));
        }
        if cfg.requests_per_minute == Some(0) {
            return Err(BackendError::Config("requests_per_minute must be >= 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs_f64(cfg.connect_timeout_secs))
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(RemoteBackend {
            name: name.into(),
            gate: Gate {
                used: Mutex::new(0),
                freed: Condvar::new(),
                limit: cfg.max_in_flight,
            },
            cfg,
            api_key,
            client,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    /// JSON body sent for `q`.
    pub fn request_body(&self, q: &AgentQuery) -> Value {
        let last_user = q.messages.iter().rposition(|m| m.role == Role::User);
        let messages: Vec<Value> = q
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let role = serde_json::to_value(m.role).expect("role serializes");
                match (&q.image_attachment, Some(i) == last_user) {
                    (Some(img), true) => {
                        let b64 = base64::engine::general_purpose::STANDARD.encode(img);
                        json!({
                            "role": role,
                            "content": [
                                {"type": "text", "text": m.content},
                                {"type": "image_url", "image_url": {"url": format!("data:application/octet-stream;base64,{b64}")}}
                            ]
                        })
                    }
                    _ => json!({"role": role, "content": m.content}),
                }
            })
            .collect();
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": q.sampling,
        });
        if let Some(seed) = q.seed {
            // Providers take signed 64-bit seeds.
            body["seed"] = json!(seed as i64);
        }
        body
    }

    fn pace(&self) {
        let Some(rpm) = self.cfg.requests_per_minute else { return };
        let spacing = Duration::from_secs_f64(60.0 / f64::from(rpm));
        let wait_until = {
            let mut next = self.next_slot.lock().expect("pacer poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + spacing;
            slot
        };
        let now = Instant::now();
        if wait_until > now {
            std::thread::sleep(wait_until - now);
        }
    }

    fn attempt(&self, body: &Value) -> Attempt {
        self.pace();
        let _permit = self.gate.acquire();
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            // Nothing was received yet, so a retry cannot duplicate work.
            Err(e) if e.is_connect() => return Attempt::Retry(BackendError::Transport(e.to_string()), None),
            Err(e) => return Attempt::Fatal(BackendError::Transport(e.to_string())),
        };
        let status = resp.status();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Fatal(BackendError::Transport(e.to_string())),
        };
        if !status.is_success() {
            let err = BackendError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
                retry_after,
            };
            return if status.as_u16() == 429 || status.is_server_error() {
                Attempt::Retry(err, retry_after)
            } else {
                Attempt::Fatal(err)
            };
        }
        let v: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(BackendError::Protocol(format!("bad JSON: {e}"))),
        };
        match v.pointer("/choices/0/message/content").and_then(Value::as_str) {
            Some(content) => Attempt::Done(content.to_string()),
            None => Attempt::Fatal(BackendError::Protocol("reply lacks choices[0].message.content".into())),
        }
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn query(&self, q: &AgentQuery) -> Result<Reply, BackendError> {
        q.validate()?;
        let body = self.request_body(q);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(Reply::text(text)),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e, after) => {
                    if attempts > self.cfg.max_retries {
                        return Err(BackendError::Exhausted {
                            attempts,
                            last: e.to_string(),
                        });
                    }
                    let backoff = Duration::from_millis(self.cfg.backoff_base_ms.saturating_mul(1 << (attempts - 1)));
                    let wait = after.unwrap_or(backoff);
                    log::warn!("{}: {e}; retrying in {wait:?}", self.name);
                    std::thread::sleep(wait);
                }
            }
        }
    }
}
