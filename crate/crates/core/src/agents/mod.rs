//! Uniform access to the three agent roles over a text-in/text-out
//! completion interface.
//!
//! An [`Agent`] binds one role to one [`Transport`] and adds retry with
//! exponential backoff, per-endpoint rate limits, and an optional response
//! cache keyed by request [`Fingerprint`]. Transports are the HTTP adapter,
//! the scripted mocks, or anything else implementing the trait.

mod cache;
mod http;
mod limiter;
pub mod mock;
pub mod prompts;
pub mod template;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpTransport;
pub use limiter::RateLimits;
pub use mock::{Directive, FailSchedule, FnMock, ScriptError, ScriptedMock};
pub use template::{bindings, PromptTemplate, TemplateError};

use limiter::RateLimiter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Working,
    Guiding,
    Rollout,
}

impl AgentRole {
    pub const ALL: [AgentRole; 3] = [AgentRole::Working, AgentRole::Guiding, AgentRole::Rollout];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Working => "working",
            AgentRole::Guiding => "guiding",
            AgentRole::Rollout => "rollout",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "working" => Ok(AgentRole::Working),
            "guiding" => Ok(AgentRole::Guiding),
            "rollout" => Ok(AgentRole::Rollout),
            other => Err(format!("unknown agent role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: AgentRole,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    pub const DEFAULT_MAX_TOKENS: u32 = 4096;

    pub fn new(role: AgentRole, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: Self::DEFAULT_MAX_TOKENS,
            seed: None,
            stop: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.prompt.is_empty() {
            return Err(AgentError::InvalidRequest("prompt is empty"));
        }
        if self.max_tokens == 0 {
            return Err(AgentError::InvalidRequest("max_tokens must be at least 1"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(AgentError::InvalidRequest("temperature must be a non-negative number"));
        }
        Ok(())
    }

    /// Stable hash of (role, prompt, temperature, seed).
    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        h.update(self.role.as_str().as_bytes());
        h.update([0u8]);
        h.update(self.temperature.to_bits().to_le_bytes());
        match self.seed {
            Some(seed) => {
                h.update([1u8]);
                h.update(seed.to_le_bytes());
            }
            None => h.update([0u8]),
        }
        h.update(self.prompt.as_bytes());
        let digest = h.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        Fingerprint(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint([u8; 32]);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for Fingerprint {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Fingerprint(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
    pub attempt_count: u32,
    /// Last transport error when `finish_reason` is `Error`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CompletionResult {
    pub fn is_error(&self) -> bool {
        self.finish_reason == FinishReason::Error
    }

    /// Converts an `Error` result into [`AgentError::Unavailable`].
    pub fn into_text(self, role: AgentRole) -> Result<String, AgentError> {
        if self.is_error() {
            Err(AgentError::Unavailable {
                role,
                attempts: self.attempt_count,
                cause: self.error.unwrap_or_default(),
            })
        } else {
            Ok(self.text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportReply {
    pub text: String,
    pub finish_reason: FinishReason,
}

impl TransportReply {
    pub fn stop(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{0}")]
pub struct TransportError(pub String);

impl TransportError {
    pub fn new(message: impl Into<String>) -> Self {
        Self(message.into())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("{role} agent unavailable after {attempts} attempt(s): {cause}")]
    Unavailable {
        role: AgentRole,
        attempts: u32,
        cause: String,
    },
    #[error("invalid completion request: {0}")]
    InvalidRequest(&'static str),
}

/// One call that either succeeds or fails at the transport level.
pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub budget: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            budget: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(budget: u32) -> Self {
        Self {
            budget,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn backoff(&self, failures: u32) -> Duration {
        let factor = 1u64.checked_shl(failures.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// A role bound to an endpoint. Cheap to clone; clones share the rate
/// limiter and cache.
#[derive(Clone)]
pub struct Agent {
    role: AgentRole,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limiter: Arc<RateLimiter>,
    cache: Option<Arc<ResponseCache>>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("role", &self.role)
            .field("retry", &self.retry)
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl Agent {
    pub fn new(role: AgentRole, transport: Arc<dyn Transport>) -> Self {
        Self {
            role,
            transport,
            retry: RetryPolicy::default(),
            limiter: Arc::new(RateLimiter::new(RateLimits::default())),
            cache: None,
        }
    }

    /// Shorthand for an agent over a mock transport with immediate retries.
    pub fn mock(role: AgentRole, transport: impl Transport + 'static) -> Self {
        Self::new(role, Arc::new(transport)).with_retry(RetryPolicy::immediate(2))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limits(mut self, limits: RateLimits) -> Self {
        self.limiter = Arc::new(RateLimiter::new(limits));
        self
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn role(&self) -> AgentRole {
        self.role
    }

    /// A request for this agent's role with default settings.
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest::new(self.role, prompt)
    }

    /// Sends `request`, retrying transport failures with exponential backoff
    /// until the retry budget is spent. Exhaustion is reported as
    /// `finish_reason = Error`, never as a panic or `Err`.
    pub fn complete(&self, request: &CompletionRequest) -> CompletionResult {
        let started = Instant::now();
        if let Err(e) = request.validate() {
            return CompletionResult {
                text: String::new(),
                finish_reason: FinishReason::Error,
                latency_ms: 0,
                attempt_count: 1,
                error: Some(e.to_string()),
            };
        }
        let fingerprint = request.fingerprint();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&fingerprint)) {
            return CompletionResult {
                text: hit.text,
                finish_reason: hit.finish_reason,
                latency_ms: 0,
                attempt_count: 1,
                error: None,
            };
        }
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.send(request)
            };
            match outcome {
                Ok(reply) => {
                    if let Some(cache) = &self.cache {
                        cache.insert(fingerprint, &reply);
                    }
                    return CompletionResult {
                        text: reply.text,
                        finish_reason: reply.finish_reason,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempts,
                        error: None,
                    };
                }
                Err(e) if attempts > self.retry.budget => {
                    return CompletionResult {
                        text: String::new(),
                        finish_reason: FinishReason::Error,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt_count: attempts,
                        error: Some(e.0),
                    };
                }
                Err(_) => thread::sleep(self.retry.backoff(attempts)),
            }
        }
    }

    /// Completes and converts an exhausted retry budget into an error.
    pub fn complete_text(&self, request: &CompletionRequest) -> Result<String, AgentError> {
        self.complete(request).into_text(self.role)
    }
}

/// The endpoints bound for one pipeline run, one per role.
#[derive(Debug, Clone)]
pub struct AgentSet {
    pub working: Agent,
    pub guiding: Agent,
    pub rollout: Agent,
}

impl AgentSet {
    pub fn get(&self, role: AgentRole) -> &Agent {
        match role {
            AgentRole::Working => &self.working,
            AgentRole::Guiding => &self.guiding,
            AgentRole::Rollout => &self.rollout,
        }
    }
}
