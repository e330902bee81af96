//! Uniform access to chat-completion backends.
//!
//! [`Gateway`] wraps a [`Backend`] with an in-flight request limit, retries
//! with exponential backoff for transient failures, a context-length
//! pre-check and usage capture. Token usage falls back to an estimate when a
//! backend does not report it.

mod backends;
mod cost;
mod http;

use std::ops::{Add, AddAssign};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptText;
use crate::util::word_count;

pub use backends::{MockBackend, RecordingBackend, ReplayBackend, ReplayRecord, ScriptedBackend};
pub use cost::{accumulate_cost, CostError, CostReport, CostRow, ModelRates, PricingTable};
pub use http::{HttpBackend, HttpBackendConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Usage {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage::new(
            self.prompt_tokens + rhs.prompt_tokens,
            self.completion_tokens + rhs.completion_tokens,
        )
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

/// Token estimate used when a backend omits usage: 1.5 tokens per word,
/// rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (word_count(text) as u64 * 3).div_ceil(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: PromptText,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, prompt: PromptText) -> Self {
        CompletionRequest {
            model_id: model_id.into(),
            prompt,
            max_output_tokens: 512,
            temperature: 0.0,
        }
    }
}

/// What a backend returns for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure: {message}")]
    Transport {
        message: String,
        billed: Option<Usage>,
    },
    #[error("rate limited")]
    RateLimited { billed: Option<Usage> },
    #[error("server error {status}: {message}")]
    Server {
        status: u16,
        message: String,
        billed: Option<Usage>,
    },
    #[error("context length exceeded: {message}")]
    ContextLength { message: String },
    #[error("no replay fixture for model `{model_id}` and prompt {prompt_sha256}")]
    FixtureMissing {
        model_id: String,
        prompt_sha256: String,
    },
    #[error("{message}")]
    Fatal { message: String },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport { .. }
                | BackendError::RateLimited { .. }
                | BackendError::Server { .. }
        )
    }

    /// Usage the provider charged for this failed attempt, if any.
    pub fn billed(&self) -> Option<Usage> {
        match self {
            BackendError::Transport { billed, .. }
            | BackendError::RateLimited { billed }
            | BackendError::Server { billed, .. } => *billed,
            _ => None,
        }
    }
}

pub trait Backend: Send + Sync {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError>;

    /// Maximum prompt size in tokens, when known.
    fn context_limit(&self) -> Option<u64> {
        None
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn send(&self, req: &CompletionRequest) -> Result<BackendReply, BackendError> {
        (**self).send(req)
    }

    fn context_limit(&self) -> Option<u64> {
        (**self).context_limit()
    }
}

/// Result of a successful [`Gateway::complete`] call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub raw_text: String,
    pub usage: Usage,
    pub usage_estimated: bool,
    /// Usage billed by failed attempts that preceded the success.
    pub billed_failures: Vec<Usage>,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("prompt of ~{estimated} tokens exceeds the context limit of {limit}")]
    ContextLength { estimated: u64, limit: u64 },
    #[error("backend rejected the request: {source}")]
    Backend {
        #[source]
        source: BackendError,
        billed: Vec<Usage>,
    },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: BackendError,
        billed: Vec<Usage>,
    },
}

impl GatewayError {
    pub fn billed(&self) -> &[Usage] {
        match self {
            GatewayError::Backend { billed, .. } | GatewayError::RetriesExhausted { billed, .. } => {
                billed
            }
            _ => &[],
        }
    }

    /// Whether the description should be dropped for being too long.
    pub fn is_context_length(&self) -> bool {
        matches!(
            self,
            GatewayError::ContextLength { .. }
                | GatewayError::Backend {
                    source: BackendError::ContextLength { .. },
                    ..
                }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `k` (0-based): `base · 2^k`.
    pub fn delay(&self, k: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << k.min(16))
    }
}

/// Counting semaphore bounding the number of requests in flight.
#[derive(Debug)]
pub struct InFlightLimiter {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    peak: AtomicU64,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        InFlightLimiter {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicU64::new(0),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        self.peak.fetch_max(*n as u64, Ordering::Relaxed);
        Permit { limiter: self }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Highest number of simultaneous permits observed.
    pub fn peak(&self) -> u64 {
        self.peak.load(Ordering::Relaxed)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().expect("limiter lock");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatewayConfig {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    retry: RetryPolicy,
    limiter: InFlightLimiter,
    requests_sent: AtomicU64,
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, config: GatewayConfig) -> Self {
        Gateway {
            backend: Box::new(backend),
            retry: config.retry,
            limiter: InFlightLimiter::new(config.max_in_flight),
            requests_sent: AtomicU64::new(0),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.limiter.limit()
    }

    pub fn limiter(&self) -> &InFlightLimiter {
        &self.limiter
    }

    /// Requests handed to the backend so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        if req.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        if let Some(limit) = self.backend.context_limit() {
            let estimated = estimate_tokens(&req.prompt.text);
            if estimated > limit {
                return Err(GatewayError::ContextLength { estimated, limit });
            }
        }

        let mut billed = Vec::new();
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.requests_sent.fetch_add(1, Ordering::Relaxed);
                self.backend.send(req)
            };
            match result {
                Ok(reply) => {
                    let (usage, usage_estimated) = match reply.usage {
                        Some(u) => (u, false),
                        None => (
                            Usage::new(estimate_tokens(&req.prompt.text), estimate_tokens(&reply.text)),
                            true,
                        ),
                    };
                    return Ok(Completion {
                        raw_text: reply.text,
                        usage,
                        usage_estimated,
                        billed_failures: billed,
                    });
                }
                Err(e) => {
                    billed.extend(e.billed());
                    if !e.is_retryable() {
                        return Err(GatewayError::Backend { source: e, billed });
                    }
                    if attempt >= self.retry.max_retries {
                        return Err(GatewayError::RetriesExhausted {
                            attempts: attempt + 1,
                            last: e,
                            billed,
                        });
                    }
                    log::warn!("retrying after backend failure: {e}");
                    let delay = self.retry.delay(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Stage;
    use std::sync::atomic::AtomicU32;

    fn prompt(text: &str) -> PromptText {
        PromptText {
            text: text.into(),
            class_names: vec!["abuse".into()],
            stage: Stage::L1,
        }
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        error: BackendError,
    }

    impl Backend for Flaky {
        fn send(&self, _: &CompletionRequest) -> Result<BackendReply, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok(BackendReply {
                    text: "ok".into(),
                    usage: Some(Usage::new(10, 2)),
                })
            }
        }
    }

    fn flaky(failures: u32, error: BackendError) -> Gateway {
        Gateway::new(
            Flaky {
                failures,
                calls: AtomicU32::new(0),
                error,
            },
            GatewayConfig {
                max_in_flight: 2,
                retry: RetryPolicy::no_delay(3),
            },
        )
    }

    #[test]
    fn estimate_is_one_and_a_half_per_word() {
        assert_eq!(estimate_tokens("one two three four"), 6);
        assert_eq!(estimate_tokens("one"), 2);
        assert_eq!(estimate_tokens(""), 0);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_secs(1));
        assert_eq!(p.delay(3), Duration::from_secs(8));
    }

    #[test]
    fn transient_failures_are_retried_and_billing_kept() {
        let gw = flaky(
            2,
            BackendError::Server {
                status: 503,
                message: "busy".into(),
                billed: Some(Usage::new(5, 0)),
            },
        );
        let c = gw.complete(&CompletionRequest::new("m", prompt("x"))).unwrap();
        assert_eq!(c.raw_text, "ok");
        assert_eq!(c.usage, Usage::new(10, 2));
        assert!(!c.usage_estimated);
        assert_eq!(c.billed_failures, vec![Usage::new(5, 0); 2]);
        assert_eq!(gw.requests_sent(), 3);
    }

    #[test]
    fn unbilled_failures_add_no_usage() {
        let gw = flaky(
            1,
            BackendError::Transport {
                message: "reset".into(),
                billed: None,
            },
        );
        let c = gw.complete(&CompletionRequest::new("m", prompt("x"))).unwrap();
        assert!(c.billed_failures.is_empty());
    }

    #[test]
    fn retries_exhaust() {
        let gw = flaky(100, BackendError::RateLimited { billed: None });
        let err = gw.complete(&CompletionRequest::new("m", prompt("x"))).unwrap_err();
        assert!(matches!(err, GatewayError::RetriesExhausted { attempts: 4, .. }));
        assert_eq!(gw.requests_sent(), 4);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let gw = flaky(
            100,
            BackendError::Fatal {
                message: "bad key".into(),
            },
        );
        assert!(matches!(
            gw.complete(&CompletionRequest::new("m", prompt("x"))),
            Err(GatewayError::Backend { .. })
        ));
        assert_eq!(gw.requests_sent(), 1);
    }

    #[test]
    fn context_limit_blocks_before_sending() {
        let backend = MockBackend::constant("{}").with_context_limit(3);
        let gw = Gateway::new(backend.clone(), GatewayConfig::default());
        let err = gw
            .complete(&CompletionRequest::new("m", prompt("one two three four five")))
            .unwrap_err();
        assert!(err.is_context_length());
        assert_eq!(backend.calls(), 0);
        assert_eq!(gw.requests_sent(), 0);
    }

    #[test]
    fn zero_output_budget_is_invalid() {
        let gw = Gateway::new(MockBackend::constant("{}"), GatewayConfig::default());
        let mut req = CompletionRequest::new("m", prompt("x"));
        req.max_output_tokens = 0;
        assert!(matches!(gw.complete(&req), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn missing_usage_is_estimated() {
        let gw = Gateway::new(MockBackend::constant("a b"), GatewayConfig::default());
        let c = gw
            .complete(&CompletionRequest::new("m", prompt("one two three four")))
            .unwrap();
        assert!(c.usage_estimated);
        assert_eq!(c.usage, Usage::new(6, 3));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(InFlightLimiter::new(3));
        let active = Arc::new(AtomicU32::new(0));
        let handles: Vec<_> = (0..12)
            .map(|_| {
                let limiter = limiter.clone();
                let active = active.clone();
                std::thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    assert!(now <= 3);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(limiter.peak() <= 3);
    }
}
