//! Deterministic stand-in for a model endpoint.
//!
//! Responses are looked up by `(role, step, page)`. The most specific matching
//! entry wins (step and page > step > page > neither); ties go to the entry that
//! appears first. Within an entry:
//!
//! * `table` mode: slot `i` receives `responses[i % len]`.
//! * `weighted` mode: the `n_slots` sibling slots are split across responses in
//!   proportion to their weights by largest-remainder apportionment, and the
//!   assignment is shuffled with a seed derived from `(master seed, role, step,
//!   page)`. Weights `{0.9, 0.1}` over ten slots therefore always give exactly
//!   nine and one, with seed-dependent placement.
//!
//! Attempts after the first (validation retries, arbiter re-asks) draw from
//! `retry[(attempt - 1) % len]` when the entry has a `retry` list.
//!
//! Token usage is synthetic: `ceil(prompt chars / 4)` prompt tokens and
//! `ceil(text chars / 4)` completion tokens. Every call is also recorded in the
//! backend's own ledger so episode accounting can be checked against it.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    derive_seed, Backend, CallContext, CallRole, CompletionRequest, CompletionResponse,
    GatewayError, TokenLedger, TokenUsage,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    #[default]
    Table,
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub text: String,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

fn unit_weight() -> f64 {
    1.0
}

impl ScriptedResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self { label: None, text: text.into(), weight: 1.0, logprobs: None }
    }

    pub fn weighted(label: impl Into<String>, weight: f64, text: impl Into<String>) -> Self {
        Self { label: Some(label.into()), text: text.into(), weight, logprobs: None }
    }

    pub fn with_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.logprobs = Some(logprobs);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub role: CallRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<String>,
    #[serde(default)]
    pub mode: ScriptMode,
    pub responses: Vec<ScriptedResponse>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retry: Vec<ScriptedResponse>,
}

impl ScriptEntry {
    pub fn table(role: CallRole, responses: Vec<ScriptedResponse>) -> Self {
        Self { role, step: None, page: None, mode: ScriptMode::Table, responses, retry: vec![] }
    }

    pub fn weighted(role: CallRole, responses: Vec<ScriptedResponse>) -> Self {
        Self { mode: ScriptMode::Weighted, ..Self::table(role, responses) }
    }

    pub fn at_step(mut self, step: usize) -> Self {
        self.step = Some(step);
        self
    }

    pub fn on_page(mut self, page: impl Into<String>) -> Self {
        self.page = Some(page.into());
        self
    }

    pub fn with_retry(mut self, retry: Vec<ScriptedResponse>) -> Self {
        self.retry = retry;
        self
    }

    fn specificity(&self) -> u8 {
        2 * u8::from(self.step.is_some()) + u8::from(self.page.is_some())
    }

    fn matches(&self, ctx: &CallContext) -> bool {
        self.role == ctx.role
            && self.step.is_none_or(|s| s == ctx.step)
            && self
                .page
                .as_ref()
                .is_none_or(|p| ctx.page.as_deref() == Some(p.as_str()))
    }
}

/// Largest-remainder split of `n` slots in proportion to `weights`.
/// Remainder ties go to the lower index.
pub fn apportion(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let remainder = |i: usize| quotas[i] - counts[i] as f64;
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn ceil_quarter(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

fn str_hash(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    ledger: Mutex<TokenLedger>,
    calls: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries, ledger: Mutex::new(TokenLedger::new()), calls: Mutex::new(0) }
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    /// Independent record of every call served so far.
    pub fn call_ledger(&self) -> TokenLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn call_count(&self) -> usize {
        *self.calls.lock().expect("call counter lock")
    }

    pub fn reset_ledger(&self) {
        *self.ledger.lock().expect("ledger lock") = TokenLedger::new();
        *self.calls.lock().expect("call counter lock") = 0;
    }

    fn lookup(&self, ctx: &CallContext) -> Option<(usize, &ScriptEntry)> {
        let mut best: Option<(usize, &ScriptEntry)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            if e.matches(ctx) && best.is_none_or(|(_, b)| e.specificity() > b.specificity()) {
                best = Some((i, e));
            }
        }
        best
    }

    /// The scripted response for a call position, without recording usage.
    pub fn response_for(&self, ctx: &CallContext) -> Result<&ScriptedResponse, GatewayError> {
        let (index, entry) = self.lookup(ctx).ok_or_else(|| {
            GatewayError::Script(format!(
                "no scripted response for role={} step={} page={}",
                ctx.role,
                ctx.step,
                ctx.page.as_deref().unwrap_or("-")
            ))
        })?;
        if ctx.attempt > 0 && !entry.retry.is_empty() {
            return Ok(&entry.retry[(ctx.attempt - 1) % entry.retry.len()]);
        }
        if entry.responses.is_empty() {
            return Err(GatewayError::Script(format!("script entry {index} has no responses")));
        }
        let pick = match entry.mode {
            ScriptMode::Table => ctx.slot % entry.responses.len(),
            ScriptMode::Weighted => {
                let n = ctx.n_slots.max(1);
                let weights: Vec<f64> = entry.responses.iter().map(|r| r.weight).collect();
                let mut assignment: Vec<usize> = apportion(&weights, n)
                    .into_iter()
                    .enumerate()
                    .flat_map(|(i, c)| std::iter::repeat_n(i, c))
                    .collect();
                let seed = derive_seed(
                    ctx.master_seed,
                    &[
                        ctx.role as u64,
                        ctx.step as u64,
                        ctx.page.as_deref().map_or(0, str_hash),
                        index as u64,
                    ],
                );
                assignment.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                assignment[ctx.slot % n]
            }
        };
        Ok(&entry.responses[pick])
    }
}

impl Backend for ScriptedBackend {
    fn complete(
        &self,
        request: &CompletionRequest,
        ctx: &CallContext,
    ) -> Result<CompletionResponse, GatewayError> {
        let scripted = self.response_for(ctx)?;
        let usage = TokenUsage::new(
            ceil_quarter(request.prompt_chars()),
            ceil_quarter(scripted.text.chars().count()),
        );
        self.ledger.lock().expect("ledger lock").record(ctx.role, usage);
        *self.calls.lock().expect("call counter lock") += 1;
        Ok(CompletionResponse {
            text: scripted.text.clone(),
            usage,
            logprobs: if request.want_logprobs { scripted.logprobs.clone() } else { None },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{sample_candidates, Message, RetryPolicy, Role};

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            model: "scripted".into(),
            messages: vec![Message::new(Role::System, prompt)],
            temperature: 1.0,
            max_tokens: 64,
            want_logprobs: false,
            seed: None,
        }
    }

    fn texts(backend: &ScriptedBackend, seed: u64, n: usize) -> Vec<String> {
        let ctx = CallContext::new(CallRole::Candidate, 0, seed);
        sample_candidates(&request("p"), backend, n, &ctx, &RetryPolicy::default())
            .into_iter()
            .map(|r| r.unwrap().response.text)
            .collect()
    }

    #[test]
    fn table_mode_is_verbatim() {
        let b = ScriptedBackend::new(vec![ScriptEntry::table(
            CallRole::Candidate,
            vec![ScriptedResponse::text("first"), ScriptedResponse::text("second")],
        )]);
        let ctx = CallContext::new(CallRole::Candidate, 0, 0);
        let r = b.complete(&request("abcde"), &ctx).unwrap();
        assert_eq!(r.text, "first");
        assert_eq!(r.usage, TokenUsage::new(2, 2));
        assert_eq!(texts(&b, 0, 3), vec!["first", "second", "first"]);
    }

    #[test]
    fn weighted_mode_exact_split() {
        let b = ScriptedBackend::new(vec![ScriptEntry::weighted(
            CallRole::Candidate,
            vec![
                ScriptedResponse::weighted("A", 0.9, "A-text"),
                ScriptedResponse::weighted("B", 0.1, "B-text"),
            ],
        )]);
        for seed in 0..20 {
            let out = texts(&b, seed, 10);
            assert_eq!(out.iter().filter(|t| *t == "A-text").count(), 9);
            assert_eq!(out.iter().filter(|t| *t == "B-text").count(), 1);
            assert_eq!(out, texts(&b, seed, 10));
        }
        let placements: std::collections::BTreeSet<usize> = (0..20)
            .map(|s| texts(&b, s, 10).iter().position(|t| t == "B-text").unwrap())
            .collect();
        assert!(placements.len() > 1, "placement should depend on the seed");
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion(&[0.9, 0.1], 10), vec![9, 1]);
        assert_eq!(apportion(&[0.4, 0.3, 0.3], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[0.5, 0.5], 1), vec![1, 0]);
        for n in 0..30 {
            assert_eq!(apportion(&[0.2, 0.7, 0.1], n).iter().sum::<usize>(), n);
        }
    }

    #[test]
    fn specificity_and_retry() {
        let b = ScriptedBackend::new(vec![
            ScriptEntry::table(CallRole::Candidate, vec![ScriptedResponse::text("default")]),
            ScriptEntry::table(CallRole::Candidate, vec![ScriptedResponse::text("page")])
                .on_page("home"),
            ScriptEntry::table(CallRole::Candidate, vec![ScriptedResponse::text("step")])
                .at_step(2)
                .with_retry(vec![ScriptedResponse::text("fixed")]),
        ]);
        let ctx = |step, page: Option<&str>| {
            CallContext::new(CallRole::Candidate, step, 0).page(page.map(String::from))
        };
        assert_eq!(b.response_for(&ctx(0, None)).unwrap().text, "default");
        assert_eq!(b.response_for(&ctx(0, Some("home"))).unwrap().text, "page");
        assert_eq!(b.response_for(&ctx(2, Some("home"))).unwrap().text, "step");
        assert_eq!(b.response_for(&ctx(2, None).attempt(1)).unwrap().text, "fixed");
        assert!(b.response_for(&CallContext::new(CallRole::Arbiter, 0, 0)).is_err());
    }

    #[test]
    fn ledger_tracks_calls() {
        let b = ScriptedBackend::new(vec![ScriptEntry::table(
            CallRole::Arbiter,
            vec![ScriptedResponse::text("Pick: 1")],
        )]);
        let ctx = CallContext::new(CallRole::Arbiter, 0, 0);
        let r1 = b.complete(&request("12345678"), &ctx).unwrap();
        let r2 = b.complete(&request("1"), &ctx).unwrap();
        assert_eq!(b.call_count(), 2);
        assert_eq!(b.call_ledger().total(), r1.usage + r2.usage);
        assert_eq!(b.call_ledger().subtotal(CallRole::Arbiter), r1.usage + r2.usage);
    }
}
