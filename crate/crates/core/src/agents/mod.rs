//! Assistant backends, simulated users and judges.
//!
//! Every backend is `Send + Sync` with no mutable state, so the experiment
//! engine can call the four arms of a round concurrently. Randomness enters
//! only through the per-call `seed`.

pub mod http;
pub mod judge;
pub mod prompts;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Domain, Role, Turn, UserProfile};
use crate::policy::{Checkpoint, Matrix, ToyPolicy, UserEmbeddingModel, UserRef, EOS};
use crate::seed::derive_seed;

pub use http::{HttpChatClient, HttpChatConfig, API_KEY_ENV};
pub use judge::{Judge, JudgeError, JudgeOutput, JudgeRequest, LlmJudge, UtilityFn, UtilityJudge};
pub use prompts::{render_user_prompt, PromptKind, RenderedPrompt, BASIC_SYSTEM_PROMPT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerationError {
    #[error("retries exhausted after {attempts} attempts (last: {last})")]
    RetriesExhausted { attempts: usize, last: String },
    #[error("request failed: {0}")]
    Request(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no scripted reply for {0:?}")]
    Unscripted(String),
    #[error("conversation must end with a user turn")]
    NotUserTurn,
    #[error("policy error: {0}")]
    Policy(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GenerationError {
    /// Stable snake_case category for reports and error turns.
    pub fn kind(&self) -> &'static str {
        match self {
            GenerationError::RetriesExhausted { .. } => "retries_exhausted",
            GenerationError::Request(_) => "request",
            GenerationError::MalformedResponse(_) => "malformed_response",
            GenerationError::Unscripted(_) => "unscripted",
            GenerationError::NotUserTurn => "not_user_turn",
            GenerationError::Policy(_) => "policy",
            GenerationError::Config(_) => "config",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("judgement needs 4 transcripts with distinct labels, got {0}")]
    MissingTranscripts(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self { role: role.into(), content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 0.7, max_tokens: 256 }
    }
}

/// Anything that completes a chat: the HTTP client, or a stub in tests.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<String, GenerationError>;
}

/// Chat messages for a conversation: system prompt, then turns by role.
pub fn chat_messages(system: &str, turns: &[Turn]) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::new("system", system)];
    out.extend(turns.iter().map(|t| {
        ChatMessage::new(if t.role == Role::User { "user" } else { "assistant" }, t.text.clone())
    }));
    out
}

pub trait Assistant: Send + Sync {
    fn id(&self) -> String;
    /// Replies to a history that ends with a user turn.
    fn respond(&self, history: &[Turn], system_prompt: &str, seed: u64) -> Result<String, GenerationError>;
}

fn last_user(history: &[Turn]) -> Result<&Turn, GenerationError> {
    match history.last() {
        Some(t) if t.role == Role::User => Ok(t),
        _ => Err(GenerationError::NotUserTurn),
    }
}

/// Table-driven assistant. Replies to the last user message by exact lookup,
/// then the fallback (where `{n}` becomes the round number). Each reply ends
/// with `marker` repeated `marker_count` times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAssistant {
    pub name: String,
    #[serde(default)]
    pub table: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default)]
    pub marker: String,
    #[serde(default)]
    pub marker_count: usize,
}

impl ScriptedAssistant {
    pub fn with_markers(name: &str, fallback: &str, marker: &str, count: usize) -> Self {
        Self {
            name: name.into(),
            table: BTreeMap::new(),
            fallback: Some(fallback.into()),
            marker: marker.into(),
            marker_count: count,
        }
    }
}

impl Assistant for ScriptedAssistant {
    fn id(&self) -> String {
        format!("scripted:{}", self.name)
    }

    fn respond(&self, history: &[Turn], _system: &str, _seed: u64) -> Result<String, GenerationError> {
        let user = last_user(history)?;
        let round = history.iter().filter(|t| t.role == Role::User).count();
        let base = match (self.table.get(user.text.trim()), &self.fallback) {
            (Some(r), _) => r.clone(),
            (None, Some(f)) => f.replace("{n}", &round.to_string()),
            (None, None) => return Err(GenerationError::Unscripted(user.text.clone())),
        };
        if self.marker_count == 0 || self.marker.is_empty() {
            return Ok(base);
        }
        let markers = vec![self.marker.as_str(); self.marker_count].join(" ");
        Ok(if base.is_empty() { markers } else { format!("{base} {markers}") })
    }
}

/// Assistant backed by any [`ChatBackend`].
pub struct ChatAssistant<B: ChatBackend> {
    pub backend: B,
    pub params: SamplingParams,
}

impl<B: ChatBackend> Assistant for ChatAssistant<B> {
    fn id(&self) -> String {
        self.backend.id()
    }

    fn respond(&self, history: &[Turn], system_prompt: &str, _seed: u64) -> Result<String, GenerationError> {
        last_user(history)?;
        self.backend.complete(&chat_messages(system_prompt, history), &self.params)
    }
}

/// Maps a word to a non-EOS token id.
pub fn word_token(word: &str, vocab: usize) -> usize {
    1 + (derive_seed(0, &["token", word]) % (vocab as u64 - 1)) as usize
}

/// The toy policy as an assistant: words hash to tokens, tokens print as `w<id>`.
#[derive(Debug, Clone)]
pub struct ToyPolicyAssistant {
    pub policy: ToyPolicy,
    pub users: Option<UserEmbeddingModel>,
    pub user: Option<String>,
    pub max_len: usize,
    pub temperature: f64,
    /// Most recent history tokens fed as the prompt.
    pub prompt_window: usize,
}

impl ToyPolicyAssistant {
    pub fn new(policy: ToyPolicy) -> Self {
        Self { policy, users: None, user: None, max_len: 24, temperature: 1.0, prompt_window: 64 }
    }

    fn context(&self) -> Result<Option<Matrix>, GenerationError> {
        match (&self.users, &self.user) {
            (Some(m), Some(u)) => m.user_embedding(UserRef::parse(u)).map(Some).map_err(|e| GenerationError::Policy(e.to_string())),
            (Some(m), None) => m.user_embedding(UserRef::Generic).map(Some).map_err(|e| GenerationError::Policy(e.to_string())),
            _ => Ok(None),
        }
    }
}

impl Assistant for ToyPolicyAssistant {
    fn id(&self) -> String {
        match &self.user {
            Some(u) => format!("toy_policy:{u}"),
            None => "toy_policy".into(),
        }
    }

    fn respond(&self, history: &[Turn], _system: &str, seed: u64) -> Result<String, GenerationError> {
        last_user(history)?;
        let mut prompt: Vec<usize> = history
            .iter()
            .flat_map(|t| t.text.split_whitespace())
            .map(|w| word_token(w, self.policy.vocab))
            .collect();
        if prompt.len() > self.prompt_window {
            prompt.drain(..prompt.len() - self.prompt_window);
        }
        let ctx = self.context()?;
        let tokens = self
            .policy
            .sample(&prompt, ctx.as_ref(), self.max_len, self.temperature, seed)
            .map_err(|e| GenerationError::Policy(e.to_string()))?;
        Ok(tokens.iter().filter(|&&t| t != EOS).map(|t| format!("w{t}")).collect::<Vec<_>>().join(" "))
    }
}

/// Serializable backend description, as written in plans and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssistantBackend {
    Scripted(ScriptedAssistant),
    ToyPolicy {
        checkpoint: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        user: Option<String>,
        #[serde(default = "default_max_len")]
        max_len: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    HttpChat {
        #[serde(flatten)]
        config: HttpChatConfig,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default = "default_max_tokens")]
        max_tokens: usize,
    },
}

fn default_max_len() -> usize {
    24
}
fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> usize {
    256
}

impl AssistantBackend {
    pub fn build(&self, trace: bool) -> Result<Arc<dyn Assistant>, GenerationError> {
        Ok(match self {
            AssistantBackend::Scripted(s) => Arc::new(s.clone()),
            AssistantBackend::ToyPolicy { checkpoint, user, max_len, temperature } => {
                let ck = Checkpoint::load(checkpoint).map_err(|e| GenerationError::Config(e.to_string()))?;
                let mut a = ToyPolicyAssistant::new(ck.policy);
                a.users = ck.users;
                a.user = user.clone();
                a.max_len = *max_len;
                a.temperature = *temperature;
                Arc::new(a)
            }
            AssistantBackend::HttpChat { config, temperature, max_tokens } => Arc::new(ChatAssistant {
                backend: HttpChatClient::new(config.clone(), trace)?,
                params: SamplingParams { temperature: *temperature, max_tokens: *max_tokens },
            }),
        })
    }
}

fn default_user_temperature() -> f64 {
    0.1
}
fn default_user_max_tokens() -> usize {
    4096
}
fn default_word_limit() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUserConfig {
    pub profile: UserProfile,
    #[serde(default = "default_user_temperature")]
    pub temperature: f64,
    #[serde(default = "default_user_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_word_limit")]
    pub word_limit_hint: usize,
}

impl SimulatedUserConfig {
    pub fn new(profile: UserProfile) -> Self {
        Self { profile, temperature: 0.1, max_tokens: 4096, word_limit_hint: 50 }
    }

    pub fn params(&self) -> SamplingParams {
        SamplingParams { temperature: self.temperature.max(0.0), max_tokens: self.max_tokens }
    }
}

/// The human side of a dynamic conversation.
pub trait SimulatedUser: Send + Sync {
    fn id(&self) -> String;
    /// Next user message given the arm's history so far (empty for the opening).
    fn message(
        &self,
        profile: &UserProfile,
        domain: Domain,
        history: &[Turn],
        opening_seed: Option<&str>,
        seed: u64,
    ) -> Result<String, GenerationError>;
}

/// Deterministic user: a topic-specific opening, then numbered follow-ups.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedUser;

impl SimulatedUser for ScriptedUser {
    fn id(&self) -> String {
        "scripted_user".into()
    }

    fn message(
        &self,
        profile: &UserProfile,
        domain: Domain,
        history: &[Turn],
        opening_seed: Option<&str>,
        _seed: u64,
    ) -> Result<String, GenerationError> {
        let round = history.iter().filter(|t| t.role == Role::User).count() + 1;
        if round == 1 {
            if let Some(s) = opening_seed {
                return Ok(s.to_string());
            }
            return Ok(format!("{}: {} wants a concrete suggestion.", domain.topic_name(), profile.user_id));
        }
        Ok(format!("Round {round}: tell me more about that."))
    }
}

/// LLM-backed simulated user using the conversation template.
pub struct LlmUser<B: ChatBackend> {
    pub backend: B,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl<B: ChatBackend> SimulatedUser for LlmUser<B> {
    fn id(&self) -> String {
        format!("llm_user:{}", self.backend.id())
    }

    fn message(
        &self,
        profile: &UserProfile,
        domain: Domain,
        history: &[Turn],
        opening_seed: Option<&str>,
        _seed: u64,
    ) -> Result<String, GenerationError> {
        if history.is_empty() {
            if let Some(s) = opening_seed {
                return Ok(s.to_string());
            }
        }
        let p = render_user_prompt(profile, PromptKind::Dynamic, domain, None, opening_seed, history, 0)
            .expect("dynamic prompts need no transcripts");
        let msgs = vec![ChatMessage::new("system", p.system), ChatMessage::new("user", p.user)];
        let params = SamplingParams { temperature: self.temperature, max_tokens: self.max_tokens };
        Ok(prompts::clean_user_reply(&self.backend.complete(&msgs, &params)?))
    }
}
