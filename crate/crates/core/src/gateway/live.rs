use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    Backend, BackendConfig, CallKey, ChatMessage, ChatRequest, ChatResponse, FinishReason,
    GatewayError, Usage,
};

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub factor: f64,
}

impl RetryPolicy {
    /// Upper bound of the sleep before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(retry as i32))
    }

    pub fn delay<R: Rng>(&self, retry: u32, rng: &mut R) -> Duration {
        self.ceiling(retry).mul_f64(rng.gen::<f64>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusClass {
    Success,
    Retryable,
    Auth,
    Fatal,
}

pub fn classify_status(status: u16) -> StatusClass {
    match status {
        200..=299 => StatusClass::Success,
        401 | 403 => StatusClass::Auth,
        429 | 500..=599 => StatusClass::Retryable,
        _ => StatusClass::Fatal,
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

/// HTTP backend for `POST {base_url}/chat/completions`.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    policy: RetryPolicy,
    retries: AtomicU64,
}

impl LiveBackend {
    pub fn new(base_url: &str, api_key: String, timeout: Duration, policy: RetryPolicy) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            policy,
            retries: AtomicU64::new(0),
        })
    }

    /// Reads the bearer token from the configured environment variable.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let base_url = config
            .base_url
            .as_deref()
            .ok_or_else(|| GatewayError::Config("missing base_url".into()))?;
        let var = config
            .api_key_env
            .as_deref()
            .ok_or_else(|| GatewayError::Config("missing api_key_env".into()))?;
        let api_key = std::env::var(var)
            .map_err(|_| GatewayError::Config(format!("environment variable {var} is not set")))?;
        Self::new(
            base_url,
            api_key,
            config.timeout,
            RetryPolicy {
                max_retries: config.max_retries,
                base: config.retry_base,
                factor: 2.0,
            },
        )
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Result<ChatResponse, (StatusClass, String, u16)> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| (StatusClass::Retryable, e.to_string(), 0))?;
        let status = resp.status().as_u16();
        match classify_status(status) {
            StatusClass::Success => {}
            class => {
                let text = resp.text().unwrap_or_default();
                return Err((class, format!("HTTP {status}: {text}"), status));
            }
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| (StatusClass::Fatal, format!("bad response body: {e}"), status))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| (StatusClass::Fatal, "response has no choices".to_string(), status))?;
        Ok(ChatResponse {
            content: choice.message.content.unwrap_or_default(),
            finish_reason: FinishReason::from_wire(choice.finish_reason.as_deref()),
            usage: wire.usage.unwrap_or_default(),
        })
    }
}

impl Backend for LiveBackend {
    fn call(&self, _key: &CallKey, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
            seed: request.seed,
        };
        let mut rng = rand::thread_rng();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(resp) => return Ok(resp),
                Err((StatusClass::Auth, _, status)) => return Err(GatewayError::Auth(status)),
                Err((StatusClass::Retryable, message, _)) if attempts <= self.policy.max_retries => {
                    log::warn!("chat call attempt {attempts} failed: {message}; retrying");
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(self.policy.delay(attempts - 1, &mut rng));
                }
                Err((_, message, _)) => return Err(GatewayError::Transport { attempts, message }),
            }
        }
    }

    fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}
