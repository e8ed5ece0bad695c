//! Chat-completion gateway.
//!
//! Callers talk to a [`ChatClient`]. The production implementation is a
//! [`Session`] borrowed from a shared [`Gateway`], which enforces the token
//! budget, limits in-flight calls, numbers calls per stream, and optionally
//! records every call to a transcript.

mod live;
mod scripted;
mod transcript;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{classify_status, LiveBackend, RetryPolicy, StatusClass};
pub use scripted::ScriptedBackend;
pub use transcript::{prompt_sha256, read_transcript, TranscriptEntry, TranscriptWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(rename = "max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Purpose tag for transcripts and diagnostics; never sent on the wire.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ChatRequest {
    pub fn single_user(model: &str, prompt: String, temperature: f64, max_output_tokens: u32) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![ChatMessage::user(prompt)],
            temperature,
            max_output_tokens,
            seed: None,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Prompt text of the last user message.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn estimated_tokens(&self) -> usize {
        self.messages
            .iter()
            .map(|m| estimate_tokens(&m.content))
            .sum::<usize>()
            + self.max_output_tokens as usize
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("negative temperature".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("stop") | None => Self::Stop,
            Some("length") => Self::Length,
            Some(_) => Self::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request needs ~{estimated} tokens, budget is {budget}")]
    BudgetExceeded { estimated: usize, budget: usize },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("transcript has no entry for stream {stream:?} seq {seq}")]
    ScriptExhausted { stream: String, seq: u64 },
    #[error("prompt diverges from transcript at stream {stream:?} seq {seq}")]
    ScriptMismatch { stream: String, seq: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transcript i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Conservative token estimate: `ceil(bytes / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

pub trait ChatClient {
    fn complete(&mut self, request: ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Token budget enforced on requests, if any.
    fn token_budget(&self) -> Option<usize> {
        None
    }
}

/// Identity of one call: the stream (usually a note id) and its position in it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallKey {
    pub stream: String,
    pub seq: u64,
}

pub trait Backend: Send + Sync {
    fn call(&self, key: &CallKey, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn retries(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Live,
    Scripted,
}

/// Default usable context: a 4096-token window less 20% headroom.
pub const DEFAULT_CONTEXT_TOKEN_BUDGET: usize = 3276;

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub transcript_path: Option<PathBuf>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub retry_base: Duration,
    pub max_in_flight: usize,
    pub context_token_budget: usize,
    /// Scripted backend: check issued prompts against recorded hashes.
    pub verify: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            base_url: None,
            api_key_env: None,
            transcript_path: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            retry_base: Duration::from_secs(1),
            max_in_flight: 4,
            context_token_budget: DEFAULT_CONTEXT_TOKEN_BUDGET,
            verify: false,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self, max_output_tokens: u32) -> Result<(), GatewayError> {
        match self.kind {
            BackendKind::Live => {
                if self.base_url.as_deref().is_none_or(str::is_empty) {
                    return Err(GatewayError::Config("live backend needs base_url".into()));
                }
                if self.api_key_env.as_deref().is_none_or(str::is_empty) {
                    return Err(GatewayError::Config("live backend needs api_key_env".into()));
                }
            }
            BackendKind::Scripted => {
                if self.transcript_path.is_none() {
                    return Err(GatewayError::Config(
                        "scripted backend needs transcript_path".into(),
                    ));
                }
            }
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        if self.context_token_budget <= max_output_tokens as usize {
            return Err(GatewayError::Config(
                "context_token_budget must exceed max_output_tokens".into(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("limiter poisoned");
        while *n == 0 {
            n = self.cond.wait(n).expect("limiter poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().expect("limiter poisoned");
        *n += 1;
        self.0.cond.notify_one();
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub calls: u64,
    pub budget_rejections: u64,
    pub retries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Shared, thread-safe front of a backend.
pub struct Gateway {
    backend: Box<dyn Backend>,
    budget: usize,
    limiter: Limiter,
    recorder: Option<TranscriptWriter>,
    seed: Option<u64>,
    calls: AtomicU64,
    budget_rejections: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, context_token_budget: usize, max_in_flight: usize) -> Self {
        Self {
            backend,
            budget: context_token_budget,
            limiter: Limiter::new(max_in_flight),
            recorder: None,
            seed: None,
            calls: AtomicU64::new(0),
            budget_rejections: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
        }
    }

    /// Builds the configured backend.
    pub fn from_config(config: &BackendConfig, max_output_tokens: u32) -> Result<Self, GatewayError> {
        config.validate(max_output_tokens)?;
        let backend: Box<dyn Backend> = match config.kind {
            BackendKind::Live => Box::new(LiveBackend::from_config(config)?),
            BackendKind::Scripted => {
                let path = config.transcript_path.as_ref().expect("validated");
                Box::new(ScriptedBackend::from_path(path, config.verify)?)
            }
        };
        Ok(Self::new(backend, config.context_token_budget, config.max_in_flight))
    }

    pub fn with_recorder(mut self, recorder: TranscriptWriter) -> Self {
        self.recorder = Some(recorder);
        self
    }

    /// Seed attached to requests that do not carry their own.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn session(&self, stream: impl Into<String>) -> Session<'_> {
        Session {
            gateway: self,
            stream: stream.into(),
            seq: 0,
        }
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            calls: self.calls.load(Ordering::Relaxed),
            budget_rejections: self.budget_rejections.load(Ordering::Relaxed),
            retries: self.backend.retries(),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }

    fn issue(&self, key: &CallKey, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let estimated = request.estimated_tokens();
        if estimated > self.budget {
            self.budget_rejections.fetch_add(1, Ordering::Relaxed);
            return Err(GatewayError::BudgetExceeded {
                estimated,
                budget: self.budget,
            });
        }
        request.validate()?;

        let response = {
            let _permit = self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.backend.call(key, request)?
        };
        self.prompt_tokens
            .fetch_add(response.usage.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(response.usage.completion_tokens, Ordering::Relaxed);

        if let Some(recorder) = &self.recorder {
            recorder.append(&TranscriptEntry::new(key, request, &response))?;
        }
        Ok(response)
    }
}

/// Per-stream handle; each worker owns one and issues calls sequentially.
pub struct Session<'a> {
    gateway: &'a Gateway,
    stream: String,
    seq: u64,
}

impl Session<'_> {
    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// Number of calls issued so far (the next call's sequence number).
    pub fn calls_issued(&self) -> u64 {
        self.seq
    }
}

impl ChatClient for Session<'_> {
    fn complete(&mut self, mut request: ChatRequest) -> Result<ChatResponse, GatewayError> {
        if request.seed.is_none() {
            request.seed = self.gateway.seed;
        }
        let key = CallKey {
            stream: self.stream.clone(),
            seq: self.seq,
        };
        let result = self.gateway.issue(&key, &request);
        if !matches!(
            result,
            Err(GatewayError::BudgetExceeded { .. }) | Err(GatewayError::InvalidRequest(_))
        ) {
            self.seq += 1;
        }
        result
    }

    fn token_budget(&self) -> Option<usize> {
        Some(self.gateway.budget)
    }
}
