//! Chat-completions client with interleaved text and image content.

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendError, Capabilities, SamplingParams, VlmBackend};
use super::messages::{Message, Part, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding a bearer token, if any.
    pub api_key_env: Option<String>,
    pub retries: usize,
    pub backoff_secs: f64,
    pub timeout_secs: f64,
    pub max_images: usize,
    pub max_context_tokens: usize,
    /// Appends one JSON line per request/response pair.
    pub audit_path: Option<PathBuf>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4.1".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            retries: 3,
            backoff_secs: 1.0,
            timeout_secs: 120.0,
            max_images: 32,
            max_context_tokens: 128_000,
            audit_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub attempt: usize,
    pub request: Value,
    pub status: Option<u16>,
    pub response: Option<String>,
    pub error: Option<String>,
}

pub struct RemoteBackend {
    config: RemoteConfig,
    http: reqwest::blocking::Client,
    audit: Arc<Mutex<Vec<AuditRecord>>>,
}

fn mime(data: &[u8]) -> &'static str {
    if data.starts_with(&[0xFF, 0xD8, 0xFF]) {
        "image/jpeg"
    } else if data.starts_with(b"RIFF") && data.get(8..12) == Some(b"WEBP") {
        "image/webp"
    } else {
        "image/png"
    }
}

fn content_part(p: &Part) -> Value {
    match p {
        Part::Text(t) => json!({"type": "text", "text": t}),
        Part::Image(i) => json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{}", mime(&i.data), B64.encode(i.data.as_slice()))}
        }),
    }
}

/// Maps messages onto a chat-completions request body.
pub fn build_request(model: &str, messages: &[Message], params: &SamplingParams) -> Value {
    let msgs: Vec<Value> = messages
        .iter()
        .map(|m| match m.role {
            Role::System | Role::Assistant => json!({"role": m.role.as_str(), "content": m.text_content()}),
            Role::User => json!({"role": "user", "content": m.parts.iter().map(content_part).collect::<Vec<_>>()}),
        })
        .collect();
    json!({
        "model": model,
        "messages": msgs,
        "temperature": params.temperature,
        "max_tokens": params.max_tokens,
        "seed": params.seed,
    })
}

pub fn parse_response(body: &str) -> Result<String, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("response JSON: {e}")))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().join("")),
        _ => Err(BackendError::Protocol("response has no choices[0].message.content".into())),
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, http, audit: Arc::new(Mutex::new(Vec::new())) })
    }

    pub fn audit_log(&self) -> Arc<Mutex<Vec<AuditRecord>>> {
        self.audit.clone()
    }

    fn record(&self, rec: AuditRecord) {
        if let Some(path) = &self.config.audit_path {
            if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
                let _ = writeln!(f, "{}", serde_json::to_string(&rec).unwrap_or_default());
            }
        }
        self.audit.lock().expect("audit lock").push(rec);
    }
}

impl VlmBackend for RemoteBackend {
    fn name(&self) -> String {
        self.config.model.clone()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { max_images: self.config.max_images, max_context_tokens: self.config.max_context_tokens }
    }

    fn complete(&mut self, messages: &[Message], params: &SamplingParams) -> Result<String, BackendError> {
        let body = build_request(&self.config.model, messages, params);
        let token = self.config.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
        let mut delay = self.config.backoff_secs;
        for attempt in 1..=self.config.retries + 1 {
            let mut req = self.http.post(&self.config.endpoint).json(&body);
            if let Some(t) = &token {
                req = req.bearer_auth(t);
            }
            let last = attempt > self.config.retries;
            match req.send() {
                Err(e) => {
                    self.record(AuditRecord { attempt, request: body.clone(), status: None, response: None, error: Some(e.to_string()) });
                    if last {
                        return Err(BackendError::Transport(format!("{e} (after {attempt} attempts)")));
                    }
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().unwrap_or_default();
                    self.record(AuditRecord { attempt, request: body.clone(), status: Some(status), response: Some(text.clone()), error: None });
                    let retryable = status == 429 || status >= 500;
                    if (200..300).contains(&status) {
                        return parse_response(&text);
                    }
                    if !retryable || last {
                        return Err(BackendError::Http { status, attempts: attempt, body: text });
                    }
                }
            }
            std::thread::sleep(Duration::from_secs_f64(delay));
            delay *= 2.0;
        }
        unreachable!("loop returns on the last attempt")
    }
}
