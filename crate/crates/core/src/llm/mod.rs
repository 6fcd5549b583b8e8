//! Completion interface shared by the real chat-completions endpoint and the
//! deterministic scripted backend, plus per-role token accounting.

mod http;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use scripted::{apportion, ScriptEntry, ScriptMode, ScriptedBackend, ScriptedResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    Developer,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Developer => "developer",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub want_logprobs: bool,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.messages.first() {
            None => Err(GatewayError::InvalidRequest("messages must not be empty".into())),
            Some(m) if !matches!(m.role, Role::System | Role::Developer) => {
                Err(GatewayError::InvalidRequest(format!(
                    "first message must be system or developer, got {}",
                    m.role.as_str()
                )))
            }
            _ if !(self.temperature.is_finite() && self.temperature >= 0.0) => Err(
                GatewayError::InvalidRequest("temperature must be a finite value >= 0".into()),
            ),
            _ if self.max_tokens == 0 => {
                Err(GatewayError::InvalidRequest("max_tokens must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Total characters across all message contents.
    pub fn prompt_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self { prompt_tokens, completion_tokens }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

/// Why a model call is made; the ledger keeps one subtotal per role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallRole {
    Candidate,
    Dedup,
    Arbiter,
    Judge,
}

impl CallRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CallRole::Candidate => "candidate",
            CallRole::Dedup => "dedup",
            CallRole::Arbiter => "arbiter",
            CallRole::Judge => "judge",
        }
    }
}

impl fmt::Display for CallRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Position of a call inside an episode. Real endpoints ignore everything but
/// the derived seed; the scripted backend keys its responses on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallContext {
    pub role: CallRole,
    pub step: usize,
    /// Candidate slot, selector index, or dedup group ordinal.
    pub slot: usize,
    /// Number of sibling slots issued together (N for candidates, K for selectors).
    pub n_slots: usize,
    /// 0 for the first try, incremented on every validation retry or re-ask.
    pub attempt: usize,
    pub master_seed: u64,
    /// Identifier of the page the agent is looking at, when known.
    pub page: Option<String>,
}

impl CallContext {
    pub fn new(role: CallRole, step: usize, master_seed: u64) -> Self {
        Self { role, step, slot: 0, n_slots: 1, attempt: 0, master_seed, page: None }
    }

    pub fn slot(mut self, slot: usize, n_slots: usize) -> Self {
        self.slot = slot;
        self.n_slots = n_slots;
        self
    }

    pub fn attempt(mut self, attempt: usize) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn page(mut self, page: Option<String>) -> Self {
        self.page = page;
        self
    }

    /// Per-slot seed: `hash(master, role, step, slot, attempt)`.
    pub fn slot_seed(&self) -> u64 {
        derive_seed(
            self.master_seed,
            &[self.role as u64, self.step as u64, self.slot as u64, self.attempt as u64],
        )
    }
}

/// Stable 64-bit seed derived from a master seed and a path of integers.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("transport failed after {attempts} attempts: {message}")]
    Exhausted { attempts: usize, message: String },
    #[error("malformed endpoint response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("logprobs requested but not supported by the backend")]
    LogprobsUnsupported,
    #[error("scripted backend: {0}")]
    Script(String),
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { retryable: true, .. })
    }
}

/// A source of completions. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn complete(
        &self,
        request: &CompletionRequest,
        ctx: &CallContext,
    ) -> Result<CompletionResponse, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_base: Duration::from_millis(250) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub response: CompletionResponse,
    /// Transport attempts used, including the successful one.
    pub attempts: usize,
}

/// One completion with exponential-backoff retries on retryable transport errors.
pub fn complete(
    request: &CompletionRequest,
    backend: &dyn Backend,
    ctx: &CallContext,
    retry: &RetryPolicy,
) -> Result<Completion, GatewayError> {
    request.validate()?;
    let max_attempts = retry.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.complete(request, ctx) {
            Ok(response) => {
                if attempt > 1 {
                    log::info!("{} call succeeded after {attempt} attempts", ctx.role);
                }
                return Ok(Completion { response, attempts: attempt });
            }
            Err(e) if e.is_retryable() && attempt < max_attempts => {
                let delay = retry.backoff_base * 2u32.saturating_pow(attempt as u32 - 1);
                log::warn!("{} call attempt {attempt} failed: {e}; retrying in {delay:?}", ctx.role);
                std::thread::sleep(delay);
            }
            Err(GatewayError::Transport { message, .. }) => {
                return Err(GatewayError::Exhausted { attempts: attempt, message })
            }
            Err(e) => return Err(e),
        }
    }
}

/// `n` independent completions; entry `i` always corresponds to slot `i`.
/// Each slot gets its own derived seed, so fan-out order cannot change results.
pub fn sample_candidates(
    request: &CompletionRequest,
    backend: &dyn Backend,
    n: usize,
    ctx: &CallContext,
    retry: &RetryPolicy,
) -> Vec<Result<Completion, GatewayError>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .map(|slot| {
                let slot_ctx = ctx.clone().slot(slot, n);
                let mut req = request.clone();
                req.seed = Some(slot_ctx.slot_seed());
                scope.spawn(move || complete(&req, backend, &slot_ctx, retry))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("candidate sampling thread panicked"))
            .collect()
    })
}

/// Model name, sampling settings and retry policy bundled with a backend.
#[derive(Clone)]
pub struct LlmClient {
    pub backend: Arc<dyn Backend>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry: RetryPolicy,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("max_tokens", &self.max_tokens)
            .finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>, model: impl Into<String>) -> Self {
        Self {
            backend,
            model: model.into(),
            temperature: 1.0,
            max_tokens: 2048,
            retry: RetryPolicy::default(),
        }
    }

    pub fn request(&self, messages: Vec<Message>, want_logprobs: bool) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            want_logprobs,
            seed: None,
        }
    }

    pub fn complete(
        &self,
        messages: Vec<Message>,
        want_logprobs: bool,
        ctx: &CallContext,
    ) -> Result<Completion, GatewayError> {
        let mut request = self.request(messages, want_logprobs);
        request.seed = Some(ctx.slot_seed());
        complete(&request, self.backend.as_ref(), ctx, &self.retry)
    }
}

/// Token usage accumulated per call role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenLedger {
    by_role: BTreeMap<CallRole, TokenUsage>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero usage is not recorded, so ledgers compare equal regardless of
    /// how many empty records were made.
    pub fn record(&mut self, role: CallRole, usage: TokenUsage) {
        if usage.total() == 0 {
            return;
        }
        *self.by_role.entry(role).or_default() += usage;
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (&role, &usage) in &other.by_role {
            self.record(role, usage);
        }
    }

    pub fn subtotal(&self, role: CallRole) -> TokenUsage {
        self.by_role.get(&role).copied().unwrap_or_default()
    }

    pub fn total(&self) -> TokenUsage {
        self.by_role.values().copied().sum()
    }

    pub fn roles(&self) -> impl Iterator<Item = (CallRole, TokenUsage)> + '_ {
        self.by_role.iter().map(|(&r, &u)| (r, u))
    }
}
