//! Uniform access to chat-completion backends: live HTTP endpoints and a
//! deterministic scripted mock, with retries, timeouts, and a bounded
//! in-flight limit shared by all callers of a backend.

mod http;
mod mock;

pub use http::HttpTransport;
pub use mock::{FailKind, MockEntry, MockScript, MockTransport, TranscriptEntry};

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected (status {status}): {message}")]
    Request { status: u16, message: String },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("mock script has no entry matching request tagged '{tag}'")]
    UnmatchedRequest { tag: String },
    #[error("user text must be non-empty")]
    EmptyUserText,
    #[error("api key not found in environment ({0})")]
    MissingApiKey(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Configuration for one model backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Backend name; used for reports and the per-backend API key override.
    pub name: String,
    pub model_name: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    /// Mock script path, resolved relative to the config file.
    #[serde(default)]
    pub script: Option<String>,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_max_retries() -> u32 {
    2
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_in_flight() -> usize {
    4
}
fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

impl BackendConfig {
    pub fn mock(name: &str) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            name: name.to_string(),
            model_name: name.to_string(),
            endpoint: None,
            temperature: default_temperature(),
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
            max_output_tokens: default_max_output_tokens(),
            script: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// Per-request parameter overrides.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RequestParams {
    pub temperature: Option<f64>,
    pub max_output_tokens: Option<u32>,
}

/// A single chat completion request.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub params: RequestParams,
    /// Routing metadata: identifies the pipeline cell issuing the request.
    /// Mock scripts can match on it; live transports ignore it.
    pub tag: String,
}

impl CompletionRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        CompletionRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            params: RequestParams::default(),
            tag: String::new(),
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub usage: TokenUsage,
    pub attempts: u32,
    pub backend_id: String,
}

/// Outcome of one transport attempt.
pub(crate) enum AttemptError {
    /// Worth retrying: network hiccup, 429, or 5xx.
    Transient(String),
    /// The attempt timed out.
    TimedOut,
    /// Non-retryable request failure (4xx other than 429).
    Fatal { status: u16, message: String },
    /// Mock script had no matching entry.
    Unmatched,
}

pub(crate) trait Transport: Send + Sync {
    fn call(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), AttemptError>;
}

/// Counting semaphore bounding in-flight calls per backend.
struct InFlightLimiter {
    available: Mutex<usize>,
    cv: Condvar,
}

impl InFlightLimiter {
    fn new(permits: usize) -> Self {
        InFlightLimiter {
            available: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.cv.wait(available).unwrap();
        }
        *available -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a InFlightLimiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.limiter.available.lock().unwrap() += 1;
        self.limiter.cv.notify_one();
    }
}

/// A ready-to-call backend: config, transport, retry policy, and the
/// in-flight limiter shared by every thread holding a reference.
pub struct Backend {
    config: BackendConfig,
    transport: Box<dyn Transport>,
    limiter: InFlightLimiter,
    /// Base backoff; zero disables sleeping (mock backends).
    backoff_base: Duration,
    mock: Option<std::sync::Arc<MockTransport>>,
}

impl Backend {
    /// Build a deterministic scripted mock backend.
    pub fn mock(config: BackendConfig, script: MockScript) -> Backend {
        let mock = std::sync::Arc::new(MockTransport::new(script));
        Backend {
            limiter: InFlightLimiter::new(config.max_in_flight),
            transport: Box::new(SharedMock(mock.clone())),
            backoff_base: Duration::ZERO,
            mock: Some(mock),
            config,
        }
    }

    /// Build a live HTTP backend; requires an API key in the environment.
    pub fn http(config: BackendConfig) -> Result<Backend, GatewayError> {
        let transport = HttpTransport::new(&config)?;
        Ok(Backend {
            limiter: InFlightLimiter::new(config.max_in_flight),
            transport: Box::new(transport),
            backoff_base: Duration::from_secs(1),
            mock: None,
            config,
        })
    }

    pub fn from_config(config: BackendConfig, script: Option<MockScript>) -> Result<Backend, GatewayError> {
        match config.kind {
            BackendKind::Mock => {
                let script = script.ok_or_else(|| {
                    GatewayError::InvalidConfig(format!("mock backend '{}' has no script", config.name))
                })?;
                Ok(Backend::mock(config, script))
            }
            BackendKind::Http => Backend::http(config),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    /// Mock instrumentation handle, when this backend is a mock.
    pub fn mock_transport(&self) -> Option<&MockTransport> {
        self.mock.as_deref()
    }

    /// Issue a completion, retrying transient failures with exponential
    /// backoff up to `max_retries`. Never exceeds `max_in_flight`
    /// simultaneous transport calls across all threads using this backend.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        if request.user_text.is_empty() {
            return Err(GatewayError::EmptyUserText);
        }
        let max_attempts = self.config.max_retries + 1;
        let mut last_transient = String::new();
        let mut timed_out = false;
        for attempt in 1..=max_attempts {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.call(request)
            };
            match outcome {
                Ok((text, usage)) => {
                    return Ok(CompletionResult {
                        text,
                        usage,
                        attempts: attempt,
                        backend_id: self.config.name.clone(),
                    })
                }
                Err(AttemptError::Fatal { status, message }) => {
                    return Err(GatewayError::Request { status, message })
                }
                Err(AttemptError::Unmatched) => {
                    return Err(GatewayError::UnmatchedRequest {
                        tag: request.tag.clone(),
                    })
                }
                Err(AttemptError::Transient(message)) => {
                    last_transient = message;
                    timed_out = false;
                }
                Err(AttemptError::TimedOut) => {
                    timed_out = true;
                }
            }
            if attempt < max_attempts && !self.backoff_base.is_zero() {
                std::thread::sleep(backoff_delay(self.backoff_base, attempt));
            }
        }
        if timed_out {
            Err(GatewayError::Timeout {
                attempts: max_attempts,
            })
        } else {
            Err(GatewayError::Transport {
                attempts: max_attempts,
                message: last_transient,
            })
        }
    }
}

/// Exponential backoff with jitter: base · 2^(attempt−1) · U[0.5, 1.0).
fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    use rand::Rng;
    let factor = 2u32.saturating_pow(attempt - 1);
    let jitter = 0.5 + 0.5 * rand::thread_rng().gen::<f64>();
    base.saturating_mul(factor).mul_f64(jitter)
}

struct SharedMock(std::sync::Arc<MockTransport>);

impl Transport for SharedMock {
    fn call(&self, req: &CompletionRequest) -> Result<(String, TokenUsage), AttemptError> {
        self.0.call(req)
    }
}
