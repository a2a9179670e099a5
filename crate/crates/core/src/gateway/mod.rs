//! Provider-agnostic chat-completion boundary.
//!
//! A [`Provider`] performs exactly one upstream attempt. [`Gateway`] wraps a
//! provider with request validation, bounded retries (transport errors and
//! rate limits only) and a cap on in-flight requests.

mod mock;
mod openai;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use mock::{Fallback, MockProvider, MockScript, ScriptEntry};
pub use openai::OpenAiProvider;

use crate::ErrorClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub max_tokens: u32,
    pub temperature: f32,
    /// Reference document the model should read (a chapter summary, the
    /// character information document).
    pub attachment: Option<String>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.messages.is_empty() && self.attachment.is_none() {
            return Err(GatewayError::InvalidRequest(
                "request needs at least one message or an attachment".into(),
            ));
        }
        Ok(())
    }

    /// Stable SHA-256 digest of the content-bearing fields: system prompt,
    /// messages and attachment. Sampling parameters are excluded.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            system_prompt: &'a str,
            messages: &'a [Message],
            attachment: Option<&'a str>,
        }
        let canonical = serde_json::to_vec(&Canonical {
            system_prompt: &self.system_prompt,
            messages: &self.messages,
            attachment: self.attachment.as_deref(),
        })
        .expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    LengthCap,
    ProviderError,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub latency: Duration,
}

/// Outcome of a single failed upstream attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    /// Network failure, timeout or 5xx. Retried.
    Transport(String),
    /// HTTP 429. Retried, honoring `retry_after` when given.
    RateLimited {
        message: String,
        retry_after: Option<Duration>,
    },
    /// The provider answered with a payload we cannot interpret. Not retried.
    Protocol(String),
    /// The provider refused the request (auth, bad request). Not retried.
    Rejected(String),
}

impl AttemptError {
    fn retryable(&self) -> bool {
        matches!(self, AttemptError::Transport(_) | AttemptError::RateLimited { .. })
    }
}

impl fmt::Display for AttemptError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptError::Transport(m) => write!(f, "transport: {m}"),
            AttemptError::RateLimited { message, .. } => write!(f, "rate limited: {message}"),
            AttemptError::Protocol(m) => write!(f, "protocol: {m}"),
            AttemptError::Rejected(m) => write!(f, "rejected: {m}"),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable after {} attempt(s): {}", attempts.len(), attempts.join("; "))]
    Exhausted { attempts: Vec<String> },
    #[error("malformed provider payload: {0}")]
    Protocol(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("invalid mock script: {0}")]
    Script(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            GatewayError::InvalidRequest(_) | GatewayError::Script(_) | GatewayError::Config(_)
        )
    }

    pub fn class(&self) -> ErrorClass {
        if self.is_precondition() {
            ErrorClass::Validation
        } else {
            ErrorClass::Provider
        }
    }
}

/// One chat-completion backend.
pub trait Provider: Send + Sync {
    fn model_id(&self) -> &str;

    /// Performs a single upstream attempt. Retrying is the gateway's job.
    fn attempt(&self, request: &CompletionRequest) -> Result<CompletionResult, AttemptError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            backoff_ms: 0,
            max_backoff_ms: 0,
        }
    }

    fn delay(&self, failed_attempts: u32) -> Duration {
        let exp = self
            .backoff_ms
            .saturating_mul(1u64 << failed_attempts.saturating_sub(1).min(16));
        Duration::from_millis(exp.min(self.max_backoff_ms))
    }
}

/// Settings for an OpenAI-compatible endpoint. The credential is referenced
/// by environment-variable name and read only when a request is sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_concurrent() -> usize {
    4
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config("retry.max_attempts must be at least 1".into()));
        }
        if self.max_concurrent == 0 {
            return Err(GatewayError::Config("max_concurrent must be at least 1".into()));
        }
        if self.model.trim().is_empty() {
            return Err(GatewayError::Config("model must be set".into()));
        }
        Ok(())
    }
}

/// Counting semaphore capping concurrent upstream requests.
struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(permits: usize) -> Self {
        Limiter {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock();
        while *n == 0 {
            self.freed.wait(&mut n);
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    retry: RetryPolicy,
    limiter: Limiter,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.provider.model_id())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, retry: RetryPolicy, max_concurrent: usize) -> Self {
        Gateway {
            provider,
            retry: RetryPolicy {
                max_attempts: retry.max_attempts.max(1),
                ..retry
            },
            limiter: Limiter::new(max_concurrent),
        }
    }

    /// Gateway over a mock provider: single attempt, no backoff.
    pub fn mock(provider: Arc<MockProvider>) -> Self {
        Gateway::new(provider, RetryPolicy::no_backoff(1), 8)
    }

    pub fn from_config(config: &ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let provider = OpenAiProvider::new(config.clone())?;
        Ok(Gateway::new(Arc::new(provider), config.retry, config.max_concurrent))
    }

    pub fn model_id(&self) -> &str {
        self.provider.model_id()
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// Sends `request`, retrying transport failures and rate limits up to the
    /// configured attempt budget.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let mut log = Vec::new();
        for attempt in 1..=self.retry.max_attempts {
            let started = Instant::now();
            let outcome = {
                let _permit = self.limiter.acquire();
                self.provider.attempt(request)
            };
            match outcome {
                Ok(mut result) => {
                    result.latency = started.elapsed();
                    return Ok(result);
                }
                Err(err) => {
                    tracing::warn!(attempt, model = self.provider.model_id(), %err, "completion attempt failed");
                    let retryable = err.retryable();
                    let hint = match &err {
                        AttemptError::RateLimited { retry_after, .. } => *retry_after,
                        _ => None,
                    };
                    match err {
                        AttemptError::Protocol(m) => return Err(GatewayError::Protocol(m)),
                        AttemptError::Rejected(m) => return Err(GatewayError::Rejected(m)),
                        other => log.push(format!("attempt {attempt}: {other}")),
                    }
                    if retryable && attempt < self.retry.max_attempts {
                        let delay = hint.unwrap_or_else(|| self.retry.delay(attempt));
                        if !delay.is_zero() {
                            std::thread::sleep(delay);
                        }
                    }
                }
            }
        }
        Err(GatewayError::Exhausted { attempts: log })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest {
            system_prompt: "sys".into(),
            messages: vec![Message::user(text)],
            max_tokens: 16,
            temperature: 0.7,
            attachment: None,
        }
    }

    /// Fails the first `failures` attempts with the given error, then succeeds.
    struct Flaky {
        calls: AtomicUsize,
        failures: usize,
        error: AttemptError,
    }

    impl Provider for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }

        fn attempt(&self, _: &CompletionRequest) -> Result<CompletionResult, AttemptError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Err(self.error.clone());
            }
            Ok(CompletionResult {
                text: "ok".into(),
                finish_reason: FinishReason::Complete,
                usage: Usage::default(),
                latency: Duration::ZERO,
            })
        }
    }

    fn flaky(failures: usize, error: AttemptError) -> Arc<Flaky> {
        Arc::new(Flaky {
            calls: AtomicUsize::new(0),
            failures,
            error,
        })
    }

    #[test]
    fn zero_max_tokens_is_rejected_before_any_call() {
        let p = flaky(0, AttemptError::Transport("x".into()));
        let gw = Gateway::new(p.clone(), RetryPolicy::no_backoff(3), 1);
        let mut r = req("hi");
        r.max_tokens = 0;
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        assert_eq!(p.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn request_needs_message_or_attachment() {
        let mut r = req("hi");
        r.messages.clear();
        assert!(r.validate().is_err());
        r.attachment = Some("chapter".into());
        assert!(r.validate().is_ok());
        r.temperature = 2.5;
        assert!(r.validate().is_err());
    }

    #[test]
    fn retries_transport_errors_then_succeeds() {
        let p = flaky(2, AttemptError::Transport("reset".into()));
        let gw = Gateway::new(p.clone(), RetryPolicy::no_backoff(3), 1);
        assert_eq!(gw.complete(&req("hi")).unwrap().text, "ok");
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retry_bound_is_respected() {
        let p = flaky(
            10,
            AttemptError::RateLimited {
                message: "slow down".into(),
                retry_after: Some(Duration::ZERO),
            },
        );
        let gw = Gateway::new(p.clone(), RetryPolicy::no_backoff(4), 1);
        match gw.complete(&req("hi")) {
            Err(GatewayError::Exhausted { attempts }) => assert_eq!(attempts.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn protocol_errors_are_not_retried() {
        let p = flaky(10, AttemptError::Protocol("no choices".into()));
        let gw = Gateway::new(p.clone(), RetryPolicy::no_backoff(5), 1);
        assert!(matches!(gw.complete(&req("hi")), Err(GatewayError::Protocol(_))));
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn fingerprint_ignores_sampling_parameters() {
        let a = req("hi");
        let mut b = a.clone();
        b.temperature = 0.0;
        b.max_tokens = 99;
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.attachment = Some("doc".into());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            backoff_ms: 100,
            max_backoff_ms: 250,
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(250));
    }
}
