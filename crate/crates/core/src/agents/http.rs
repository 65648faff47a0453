//! Chat-completions client over HTTP.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatBackend, ChatMessage, GenerationError, SamplingParams};

pub const API_KEY_ENV: &str = "PREFSIM_API_KEY";

fn default_path() -> String {
    "/v1/chat/completions".into()
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_attempts() -> usize {
    3
}
fn default_backoff_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatConfig {
    /// Base URL, e.g. `https://api.example.com`.
    pub endpoint: String,
    #[serde(default = "default_path")]
    pub path: String,
    pub model: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_attempts")]
    pub attempts: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl HttpChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            path: default_path(),
            model: model.into(),
            timeout_ms: default_timeout_ms(),
            attempts: default_attempts(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), self.path)
    }
}

/// Blocking client with bounded retries. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    config: HttpChatConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    trace: bool,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(GenerationError),
}

impl HttpChatClient {
    /// Reads the bearer token from [`API_KEY_ENV`].
    pub fn new(config: HttpChatConfig, trace: bool) -> Result<Self, GenerationError> {
        if config.endpoint.trim().is_empty() {
            return Err(GenerationError::Config("http endpoint is empty".into()));
        }
        if config.attempts == 0 {
            return Err(GenerationError::Config("attempts must be >= 1".into()));
        }
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Ok(Self { config, agent, api_key, trace })
    }

    pub fn config(&self) -> &HttpChatConfig {
        &self.config
    }

    fn attempt(&self, body: &serde_json::Value, timeout: Duration) -> Attempt {
        let mut req = self
            .agent
            .post(&self.config.url())
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retry(format!("timeout ({t})")),
            Err(e) => return Attempt::Fatal(GenerationError::Request(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retry(format!("timeout reading body ({t})")),
            Err(e) => return Attempt::Fatal(GenerationError::Request(e.to_string())),
        };
        if self.trace {
            log::info!(target: "prefsim::trace", "response {status}: {text}");
        }
        match status {
            200..=299 => match extract_content(&text) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            },
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(GenerationError::Request(format!("HTTP {status}: {}", snippet(&text)))),
        }
    }
}

fn snippet(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// `choices[0].message.content` of a chat-completions response.
pub fn extract_content(body: &str) -> Result<String, GenerationError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| GenerationError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| GenerationError::MalformedResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpChatClient {
    fn id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    /// Retries on timeouts, 429 and 5xx with exponential backoff. The whole
    /// call, sleeps included, stays within `timeout * attempts`.
    fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<String, GenerationError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if self.trace {
            let auth = if self.api_key.is_some() { "Bearer [REDACTED]" } else { "none" };
            log::info!(target: "prefsim::trace", "POST {} (authorization: {auth}) {body}", self.config.url());
        }
        let per_call = Duration::from_millis(self.config.timeout_ms);
        let deadline = Instant::now() + per_call * self.config.attempts as u32;
        let mut backoff = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 1..=self.config.attempts {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            match self.attempt(&body, per_call.min(remaining)) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(why) => {
                    log::warn!("chat request attempt {attempt}/{} failed: {why}", self.config.attempts);
                    last = why;
                }
            }
            if attempt < self.config.attempts {
                let remaining = deadline.saturating_duration_since(Instant::now());
                std::thread::sleep(backoff.min(remaining));
                backoff *= 2;
            }
        }
        Err(GenerationError::RetriesExhausted { attempts: self.config.attempts, last })
    }
}
