//! Chat-completions endpoint backend.
//!
//! Request body fields: `model`, `messages[{role, content}]`, `temperature`,
//! `max_tokens`, `seed`, and `logprobs: true` when token logprobs are wanted.
//! Response fields read: `choices[0].message.content`,
//! `choices[0].logprobs.content[*].logprob`, `usage.prompt_tokens`,
//! `usage.completion_tokens`. Everything else is ignored.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, CallContext, CompletionRequest, CompletionResponse, GatewayError, Role, TokenUsage};

/// Environment variable holding the bearer token, unless overridden.
pub const API_KEY_ENV: &str = "CATTS_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL such as `https://host/v1`; `/chat/completions` is appended
    /// unless already present.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Send `developer` messages with the `system` role, for endpoints that
    /// do not know the developer role.
    pub developer_as_system: bool,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            developer_as_system: false,
        }
    }
}

pub struct HttpBackend {
    url: String,
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let trimmed = config.endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(format!("http client: {e}")))?;
        Ok(Self { url, config, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireTokenLogprob>>,
}

#[derive(Deserialize)]
struct WireTokenLogprob {
    logprob: f64,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

/// Decode a chat-completions response body.
pub(crate) fn parse_response_body(body: &str) -> Result<CompletionResponse, GatewayError> {
    let wire: WireResponse = serde_json::from_str(body)
        .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
    let usage = wire
        .usage
        .ok_or_else(|| GatewayError::MalformedResponse("missing usage".into()))?;
    let logprobs = choice
        .logprobs
        .and_then(|l| l.content)
        .map(|tokens| tokens.into_iter().map(|t| t.logprob).collect());
    Ok(CompletionResponse {
        text: choice.message.content.unwrap_or_default(),
        usage: TokenUsage::new(usage.prompt_tokens, usage.completion_tokens),
        logprobs,
    })
}

impl Backend for HttpBackend {
    fn complete(
        &self,
        request: &CompletionRequest,
        _ctx: &CallContext,
    ) -> Result<CompletionResponse, GatewayError> {
        let messages = request
            .messages
            .iter()
            .map(|m| WireMessage {
                role: match m.role {
                    Role::Developer if self.config.developer_as_system => "system",
                    r => r.as_str(),
                },
                content: &m.content,
            })
            .collect();
        let body = WireRequest {
            model: &request.model,
            messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
            logprobs: request.want_logprobs,
        };
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| GatewayError::Transport {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| GatewayError::Transport {
            message: e.to_string(),
            retryable: true,
        })?;
        if !status.is_success() {
            return Err(GatewayError::Transport {
                message: format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
                retryable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        let parsed = parse_response_body(&text)?;
        if request.want_logprobs && parsed.logprobs.is_none() {
            log::warn!("endpoint returned no logprobs although they were requested");
        }
        Ok(parsed)
    }
}
