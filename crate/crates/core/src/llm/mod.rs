//! Chat-completion gateway returning token-level alternatives with logprobs.
//!
//! Providers implement [`LlmProvider`]. [`Gateway`] wraps a provider with
//! request validation and the retry policy; the rest of the crate only talks
//! to `&dyn LlmProvider`, so a gateway, a bare mock, or a test double can be
//! passed interchangeably.

mod http;
mod mock;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpConfig, HttpProvider};
pub use mock::{FixtureEntry, MockProvider, ScriptedCompletion, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Alternatives requested per token position.
    pub top_alternatives: u32,
}

impl DecodingParams {
    pub fn check(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidParams("temperature must be ≥ 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidParams("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidParams("max_tokens must be positive".into()));
        }
        if self.top_alternatives == 0 {
            return Err(LlmError::InvalidParams("top_alternatives must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Per-provider bounds on decoding parameters. These are engine
/// configuration, looked up from each provider's documentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderLimits {
    pub min_temperature: f64,
    pub min_top_p: f64,
    pub max_top_alternatives: u32,
    pub max_tokens: u32,
}

impl Default for ProviderLimits {
    fn default() -> Self {
        Self {
            min_temperature: 0.0,
            min_top_p: 0.01,
            max_top_alternatives: 20,
            max_tokens: 512,
        }
    }
}

impl ProviderLimits {
    /// Most deterministic decoding the provider accepts, with as many
    /// alternatives per position as it will return.
    pub fn deterministic_params(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.min_temperature,
            top_p: self.min_top_p,
            max_tokens: self.max_tokens,
            top_alternatives: self.max_top_alternatives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAlternative {
    pub token: String,
    pub logprob: f64,
}

impl TokenAlternative {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPosition {
    pub chosen_token: String,
    /// Sorted by descending logprob.
    pub alternatives: Vec<TokenAlternative>,
}

impl TokenPosition {
    /// Builds a position, sorting alternatives and inserting the chosen token
    /// if the provider omitted it from the list.
    pub fn new(chosen: impl Into<String>, chosen_logprob: f64, mut alternatives: Vec<TokenAlternative>) -> Self {
        let chosen = chosen.into();
        if !alternatives.iter().any(|a| a.token == chosen) {
            alternatives.push(TokenAlternative::new(chosen.clone(), chosen_logprob));
        }
        // stable, so equal logprobs keep provider order
        alternatives.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
        Self {
            chosen_token: chosen,
            alternatives,
        }
    }

    /// A position carrying only the chosen token, for providers that return
    /// no alternatives.
    pub fn single(token: impl Into<String>, logprob: f64) -> Self {
        let token = token.into();
        Self {
            alternatives: vec![TokenAlternative::new(token.clone(), logprob)],
            chosen_token: token,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.alternatives.is_empty() {
            return Err("position has no alternatives".into());
        }
        if !self.alternatives.iter().any(|a| a.token == self.chosen_token) {
            return Err(format!("chosen token {:?} not among alternatives", self.chosen_token));
        }
        if self.alternatives.iter().any(|a| !a.logprob.is_finite()) {
            return Err("non-finite logprob".into());
        }
        if self.alternatives.windows(2).any(|w| w[0].logprob < w[1].logprob) {
            return Err("alternatives not sorted by descending logprob".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub full_text: String,
    pub positions: Vec<TokenPosition>,
    pub provider_name: String,
    pub request_fingerprint: String,
}

impl Completion {
    /// Checks the structural invariants: chosen tokens concatenate to the
    /// text, and every position is well formed.
    pub fn check(&self) -> Result<(), String> {
        let joined: String = self.positions.iter().map(|p| p.chosen_token.as_str()).collect();
        if joined != self.full_text {
            return Err("chosen tokens do not concatenate to full_text".into());
        }
        for (i, p) in self.positions.iter().enumerate() {
            p.check().map_err(|e| format!("position {i}: {e}"))?;
        }
        Ok(())
    }
}

/// Stable hash of a request, used to key mock fixtures and traces.
pub fn request_fingerprint(prompt: &str, params: &DecodingParams) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        prompt: &'a str,
        params: &'a DecodingParams,
    }
    let bytes = serde_json::to_vec(&Key { prompt, params }).expect("fingerprint key serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("provider returned no token logprobs; check that logprobs are enabled for this model")]
    MissingLogprobs,
    #[error("provider rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("no mock fixture for request {fingerprint} (prompt starts {prompt_head:?})")]
    FixtureMissing { fingerprint: String, prompt_head: String },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::RateLimited { .. })
    }
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;

    fn limits(&self) -> ProviderLimits {
        ProviderLimits::default()
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<Completion, LlmError>;

    fn deterministic_params(&self) -> DecodingParams {
        self.limits().deterministic_params()
    }
}

pub(crate) fn check_request(prompt: &str, params: &DecodingParams) -> Result<(), LlmError> {
    if prompt.trim().is_empty() {
        return Err(LlmError::EmptyPrompt);
    }
    params.check()
}

#[derive(Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub sleep: fn(Duration),
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            sleep: std::thread::sleep,
        }
    }
}

impl fmt::Debug for RetryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RetryPolicy")
            .field("max_retries", &self.max_retries)
            .field("base_delay", &self.base_delay)
            .field("max_delay", &self.max_delay)
            .finish()
    }
}

impl RetryPolicy {
    /// Never sleeps; useful in tests.
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            sleep: |_| {},
        }
    }

    fn delay(&self, attempt: u32, err: &LlmError) -> Duration {
        let backoff = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        let hinted = match err {
            LlmError::RateLimited { retry_after: Some(d) } => backoff.max(*d),
            _ => backoff,
        };
        hinted.min(self.max_delay)
    }
}

/// A provider plus request validation and retry with exponential backoff.
pub struct Gateway {
    provider: Box<dyn LlmProvider>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(provider: Box<dyn LlmProvider>) -> Self {
        Self {
            provider,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl LlmProvider for Gateway {
    fn name(&self) -> &str {
        self.provider.name()
    }

    fn limits(&self) -> ProviderLimits {
        self.provider.limits()
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<Completion, LlmError> {
        check_request(prompt, params)?;
        let mut attempt = 0;
        loop {
            match self.provider.complete(prompt, params) {
                Ok(c) => return Ok(c),
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    let wait = self.retry.delay(attempt, &e);
                    log::warn!("{} failed ({e}); retry {} in {wait:?}", self.provider.name(), attempt + 1);
                    (self.retry.sleep)(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
