//! OpenAI-compatible `chat/completions` client with `logprobs` enabled.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    check_request, request_fingerprint, Completion, DecodingParams, LlmError, LlmProvider,
    ProviderLimits, TokenAlternative, TokenPosition,
};

pub const API_KEY_ENV: &str = "FORESIGHT_LLM_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub provider_name: String,
    pub limits: ProviderLimits,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            provider_name: "openai-compatible".into(),
            limits: ProviderLimits::default(),
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<WireAlternative>,
}

#[derive(Deserialize)]
struct WireAlternative {
    token: String,
    logprob: f64,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

/// Converts a chat-completions response body into positions. Providers that
/// return logprobs for the chosen token only get single-alternative
/// positions.
pub(crate) fn parse_response(body: &str) -> Result<Vec<TokenPosition>, LlmError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))?;
    let tokens = choice
        .logprobs
        .and_then(|l| l.content)
        .filter(|c| !c.is_empty())
        .ok_or(LlmError::MissingLogprobs)?;
    tokens
        .into_iter()
        .map(|t| {
            if !t.logprob.is_finite() || t.top_logprobs.iter().any(|a| !a.logprob.is_finite()) {
                return Err(LlmError::MalformedResponse(format!(
                    "non-finite logprob at token {:?}",
                    t.token
                )));
            }
            Ok(if t.top_logprobs.is_empty() {
                TokenPosition::single(t.token, t.logprob)
            } else {
                let alts = t
                    .top_logprobs
                    .into_iter()
                    .map(|a| TokenAlternative::new(a.token, a.logprob))
                    .collect();
                TokenPosition::new(t.token, t.logprob, alts)
            })
        })
        .collect()
}

fn retry_after(resp: &ureq::http::Response<ureq::Body>) -> Option<Duration> {
    resp.headers()
        .get("retry-after")?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| *s >= 0.0 && s.is_finite())
        .map(Duration::from_secs_f64)
}

impl LlmProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.config.provider_name
    }

    fn limits(&self) -> ProviderLimits {
        self.config.limits
    }

    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<Completion, LlmError> {
        check_request(prompt, params)?;
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "logprobs": true,
            "top_logprobs": params.top_alternatives,
        });
        let mut req = self.agent.post(self.endpoint());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            return Err(LlmError::RateLimited {
                retry_after: retry_after(&resp),
            });
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if status >= 500 {
            return Err(LlmError::Transport(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(LlmError::Rejected { status, body: text });
        }
        let positions = parse_response(&text)?;
        Ok(Completion {
            full_text: positions.iter().map(|p| p.chosen_token.as_str()).collect(),
            positions,
            provider_name: self.config.provider_name.clone(),
            request_fingerprint: request_fingerprint(prompt, params),
        })
    }
}
