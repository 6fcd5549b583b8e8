//! Per-step action selection: majority vote, arbiter, arbiter scaling,
//! DeepConf confidence voting, and the uncertainty gate that switches
//! between majority and arbitration.
//!
//! Arbiter replies are read line by line. Keys are case-insensitive and must
//! start a line:
//!
//! ```text
//! Thoughts: <free text, may continue on following lines>
//! Pick: <1-based candidate number>
//! Confidence: <decimal in [0, 1]>
//! ```
//!
//! Cluster indices in a [`SelectionDecision`] are 0-based.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::action::{render_action, Action};
use crate::llm::{CallContext, CallRole, GatewayError, LlmClient, Message, Role, TokenUsage};
use crate::prompts::{render, PromptSet};
use crate::stats::{UncertaintyStats, VoteDistribution};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("gate mode {0} has no uncertainty value")]
    NoGateValue(GateMode),
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("logprobs unavailable")]
    LogprobsUnavailable,
    #[error("confidence of an empty token sequence is undefined")]
    EmptySequence,
    #[error("strategy needs an arbiter backend")]
    MissingBackend,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Always majority.
    #[default]
    None,
    /// Always arbitrate.
    Always,
    Entropy,
    Margin,
}

impl GateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GateMode::None => "none",
            GateMode::Always => "always",
            GateMode::Entropy => "entropy",
            GateMode::Margin => "margin",
        }
    }
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(GateMode::None),
            "always" => Ok(GateMode::Always),
            "entropy" => Ok(GateMode::Entropy),
            "margin" => Ok(GateMode::Margin),
            _ => Err(format!("unknown gate mode {s:?} (expected none, always, entropy, margin)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub mode: GateMode,
    pub tau: f64,
}

impl GateConfig {
    pub fn new(mode: GateMode, tau: f64) -> Self {
        Self { mode, tau }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(SelectionError::InvalidConfig(format!(
                "tau must be finite and >= 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeepConfVariant {
    #[default]
    AverageTrace,
    Tail,
    BottomPercent,
}

impl DeepConfVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DeepConfVariant::AverageTrace => "average_trace",
            DeepConfVariant::Tail => "tail",
            DeepConfVariant::BottomPercent => "bottom_percent",
        }
    }
}

impl std::str::FromStr for DeepConfVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "average_trace" => Ok(DeepConfVariant::AverageTrace),
            "tail" => Ok(DeepConfVariant::Tail),
            "bottom_percent" => Ok(DeepConfVariant::BottomPercent),
            _ => Err(format!(
                "unknown deepconf variant {s:?} (expected average_trace, tail, bottom_percent)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepConfConfig {
    pub variant: DeepConfVariant,
    pub tail_fraction: f64,
    pub bottom_fraction: f64,
    /// Sliding window length in tokens for `bottom_percent`.
    pub window: usize,
    /// Fraction of candidates kept after confidence filtering.
    pub eta: f64,
    pub weighted: bool,
}

impl Default for DeepConfConfig {
    fn default() -> Self {
        Self {
            variant: DeepConfVariant::AverageTrace,
            tail_fraction: 0.2,
            bottom_fraction: 0.1,
            window: 128,
            eta: 0.9,
            weighted: false,
        }
    }
}

impl DeepConfConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(SelectionError::InvalidConfig(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        frac("tail_fraction", self.tail_fraction)?;
        frac("bottom_fraction", self.bottom_fraction)?;
        frac("eta", self.eta)?;
        if self.window == 0 {
            return Err(SelectionError::InvalidConfig("window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Majority,
    /// Arbitrate every step; `k > 1` is arbiter scaling.
    Arbiter { k: usize },
    Catts { gate: GateConfig, k: usize },
    #[serde(rename = "deepconf")]
    DeepConf(DeepConfConfig),
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::Majority => "majority".into(),
            Strategy::Arbiter { k: 1 } => "arbiter".into(),
            Strategy::Arbiter { k } => format!("arbiter_scaling(k={k})"),
            Strategy::Catts { gate, k } => {
                let mut s = format!("catts({},tau={}", gate.mode, gate.tau);
                if *k > 1 {
                    s.push_str(&format!(",k={k}"));
                }
                s.push(')');
                s
            }
            Strategy::DeepConf(cfg) => format!(
                "deepconf({},eta={}{})",
                cfg.variant.as_str(),
                cfg.eta,
                if cfg.weighted { ",weighted" } else { "" }
            ),
        }
    }

    pub fn needs_logprobs(&self) -> bool {
        matches!(self, Strategy::DeepConf(_))
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        match self {
            Strategy::Majority => Ok(()),
            Strategy::Arbiter { k } | Strategy::Catts { k, .. } if *k == 0 => {
                Err(SelectionError::InvalidConfig("k must be >= 1".into()))
            }
            Strategy::Arbiter { .. } => Ok(()),
            Strategy::Catts { gate, .. } => gate.validate(),
            Strategy::DeepConf(cfg) => cfg.validate(),
        }
    }
}

/// Which path produced the executed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Majority,
    Arbiter,
    ArbiterScaling,
    Deepconf,
}

/// One arbiter call sequence (initial ask plus re-asks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorPick {
    /// 0-based cluster index, `None` when no valid pick was obtained.
    pub pick: Option<usize>,
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thoughts: Option<String>,
    /// Calls made, including re-asks.
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepConfTrace {
    /// `(candidate index, confidence)` for every parsed candidate.
    pub confidences: Vec<(usize, f64)>,
    /// Candidate indices kept by the filter, best first.
    pub survivors: Vec<usize>,
    /// Vote (or summed confidence) per cluster over the survivors.
    pub cluster_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub chosen: Action,
    pub chosen_cluster: usize,
    pub majority_cluster: usize,
    #[serde(rename = "strategy")]
    pub route: Route,
    pub gate_value: Option<f64>,
    pub arbiter_invoked: bool,
    pub arbiter_pick: Option<usize>,
    pub arbiter_confidence: Option<f64>,
    #[serde(rename = "override")]
    pub override_: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selector_picks: Vec<SelectorPick>,
    /// An arbiter was invoked but produced no usable pick.
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deepconf: Option<DeepConfTrace>,
    /// Tokens spent on arbiter calls for this decision.
    pub arbiter_usage: TokenUsage,
}

impl SelectionDecision {
    /// Copy with the diagnostic gate value cleared, for comparing what was decided.
    pub fn without_gate_value(&self) -> Self {
        Self { gate_value: None, ..self.clone() }
    }
}

/// Plurality cluster; ties go to the lowest index.
pub fn majority_select(dist: &VoteDistribution) -> (usize, Action) {
    let counts = dist.counts();
    let best = argmax_first(&counts);
    (best, dist.clusters()[best].representative.clone())
}

fn argmax_first(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn majority_decision(dist: &VoteDistribution, gate_value: Option<f64>) -> SelectionDecision {
    let (idx, action) = majority_select(dist);
    SelectionDecision {
        chosen: action,
        chosen_cluster: idx,
        majority_cluster: idx,
        route: Route::Majority,
        gate_value,
        arbiter_invoked: false,
        arbiter_pick: None,
        arbiter_confidence: None,
        override_: false,
        selector_picks: Vec::new(),
        fallback: false,
        deepconf: None,
        arbiter_usage: TokenUsage::default(),
    }
}

/// `H` for the entropy gate, `1 - margin` for the margin gate.
pub fn gate_value(stats: &UncertaintyStats, gate: &GateConfig) -> Result<f64, SelectionError> {
    match gate.mode {
        GateMode::Entropy => Ok(stats.entropy),
        GateMode::Margin => Ok(1.0 - stats.margin),
        other => Err(SelectionError::NoGateValue(other)),
    }
}

/// Arbitrate iff `U > tau`; `U == tau` stays with the majority.
pub fn should_arbitrate(stats: &UncertaintyStats, gate: &GateConfig) -> bool {
    match gate.mode {
        GateMode::None => false,
        GateMode::Always => true,
        _ => gate_value(stats, gate).is_ok_and(|u| u > gate.tau),
    }
}

/// What the arbiter sees besides the candidates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArbiterContext {
    pub intent: String,
    pub previous_actions: Vec<String>,
    pub page_text: String,
}

/// Arbiter call settings shared by the arbiter-based strategies.
#[derive(Debug, Clone, Copy)]
pub struct ArbiterSetup<'a> {
    pub client: &'a LlmClient,
    pub prompts: &'a PromptSet,
    /// Base call context; role, slot and attempt are set per call.
    pub call: &'a CallContext,
    /// Extra asks after an unparseable reply.
    pub reasks: usize,
}

/// Parsed arbiter reply. `pick` is 1-based as written by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbiterReply {
    pub thoughts: Option<String>,
    pub pick: Option<usize>,
    pub confidence: Option<f64>,
}

fn strip_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let line = line.trim_start().trim_start_matches(['*', '#', ' ']);
    let head = line.get(..key.len())?;
    head.eq_ignore_ascii_case(key)
        .then(|| line[key.len()..].trim_start_matches(['*', ' ']).trim())
}

fn leading_number(s: &str) -> Option<&str> {
    let end = s
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
        .map_or(s.len(), |(i, _)| i);
    let num = s[..end].trim_end_matches('.');
    (!num.is_empty()).then_some(num)
}

pub fn parse_arbiter_reply(text: &str) -> ArbiterReply {
    let mut reply = ArbiterReply { thoughts: None, pick: None, confidence: None };
    let mut thoughts: Option<Vec<&str>> = None;
    let mut in_thoughts = false;
    for line in text.lines() {
        if let Some(rest) = strip_key(line, "thoughts:") {
            thoughts = Some(vec![rest]);
            in_thoughts = true;
        } else if let Some(rest) = strip_key(line, "pick:") {
            in_thoughts = false;
            reply.pick = leading_number(rest).and_then(|n| n.parse().ok());
        } else if let Some(rest) = strip_key(line, "confidence:") {
            in_thoughts = false;
            reply.confidence = leading_number(rest)
                .and_then(|n| n.parse::<f64>().ok())
                .filter(|c| (0.0..=1.0).contains(c));
        } else if in_thoughts {
            if let Some(t) = thoughts.as_mut() {
                t.push(line);
            }
        }
    }
    reply.thoughts = thoughts.map(|t| t.join("\n").trim().to_string()).filter(|t| !t.is_empty());
    reply
}

/// Numbered candidate list shown to the arbiter.
pub fn render_candidates(dist: &VoteDistribution) -> String {
    let total = dist.denominator();
    dist.clusters()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            format!("{}. {} (votes: {}/{})", i + 1, render_action(&c.representative), c.count, total)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn arbiter_messages(
    actx: &ArbiterContext,
    dist: &VoteDistribution,
    prompts: &PromptSet,
) -> Vec<Message> {
    let n = dist.len().to_string();
    let previous = if actx.previous_actions.is_empty() {
        "none".to_string()
    } else {
        actx.previous_actions
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{}. {a}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let candidates = render_candidates(dist);
    vec![
        Message::new(Role::System, render(&prompts.arbiter_system, &[("n", &n)])),
        Message::new(
            Role::User,
            render(
                &prompts.arbiter_user,
                &[
                    ("intent", &actx.intent),
                    ("previous_actions", &previous),
                    ("page", &actx.page_text),
                    ("candidates", &candidates),
                ],
            ),
        ),
    ]
}

/// Ask one arbiter, re-asking on an unusable pick. A single cluster is
/// returned as pick 0 without any call.
pub fn arbiter_select(
    actx: &ArbiterContext,
    dist: &VoteDistribution,
    setup: &ArbiterSetup<'_>,
    slot: usize,
    n_slots: usize,
) -> Result<(SelectorPick, TokenUsage), SelectionError> {
    let n = dist.len();
    if n == 1 {
        return Ok((
            SelectorPick { pick: Some(0), confidence: None, thoughts: None, calls: 0 },
            TokenUsage::default(),
        ));
    }
    let mut messages = arbiter_messages(actx, dist, setup.prompts);
    let mut usage = TokenUsage::default();
    let mut last = ArbiterReply { thoughts: None, pick: None, confidence: None };
    for attempt in 0..=setup.reasks {
        let mut ctx = setup.call.clone().slot(slot, n_slots).attempt(attempt);
        ctx.role = CallRole::Arbiter;
        let done = setup.client.complete(messages.clone(), false, &ctx)?;
        usage += done.response.usage;
        last = parse_arbiter_reply(&done.response.text);
        if let Some(p) = last.pick.filter(|p| (1..=n).contains(p)) {
            return Ok((
                SelectorPick {
                    pick: Some(p - 1),
                    confidence: last.confidence,
                    thoughts: last.thoughts,
                    calls: attempt + 1,
                },
                usage,
            ));
        }
        log::debug!("arbiter reply without a usable pick (attempt {attempt})");
        messages.push(Message::new(Role::Assistant, done.response.text));
        messages.push(Message::new(
            Role::User,
            format!("Your reply had no valid pick. Answer again and include a line `Pick: <number from 1 to {n}>`."),
        ));
    }
    Ok((
        SelectorPick { pick: None, confidence: None, thoughts: last.thoughts, calls: setup.reasks + 1 },
        usage,
    ))
}

/// Plurality over selector picks (0-based). Ties go to the cluster with more
/// votes, then to the lower index. `None` picks are ignored.
pub fn aggregate_picks(picks: &[Option<usize>], counts: &[usize]) -> Option<usize> {
    let mut tally = vec![0usize; counts.len()];
    for p in picks.iter().flatten() {
        tally[*p] += 1;
    }
    let mut best: Option<usize> = None;
    for i in 0..counts.len() {
        if tally[i] == 0 {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if (tally[i], counts[i]) > (tally[b], counts[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

/// `k` independent arbiters aggregated by plurality. With `k == 1` this is a
/// plain arbiter call. If no selector yields a pick the majority is executed.
pub fn arbiter_scaling_select(
    actx: &ArbiterContext,
    dist: &VoteDistribution,
    setup: &ArbiterSetup<'_>,
    k: usize,
) -> Result<SelectionDecision, SelectionError> {
    if k == 0 {
        return Err(SelectionError::InvalidConfig("k must be >= 1".into()));
    }
    if dist.len() == 1 {
        return Ok(majority_decision(dist, None));
    }
    let results: Vec<Result<(SelectorPick, TokenUsage), SelectionError>> = if k == 1 {
        vec![arbiter_select(actx, dist, setup, 0, 1)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..k)
                .map(|j| scope.spawn(move || arbiter_select(actx, dist, setup, j, k)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("arbiter thread panicked")).collect()
        })
    };
    let mut picks = Vec::with_capacity(k);
    let mut usage = TokenUsage::default();
    for r in results {
        let (pick, u) = r?;
        usage += u;
        picks.push(pick);
    }

    let mut decision = majority_decision(dist, None);
    decision.route = if k == 1 { Route::Arbiter } else { Route::ArbiterScaling };
    decision.arbiter_invoked = true;
    decision.arbiter_usage = usage;
    let raw: Vec<Option<usize>> = picks.iter().map(|p| p.pick).collect();
    match aggregate_picks(&raw, &dist.counts()) {
        Some(winner) => {
            let confs: Vec<f64> = picks
                .iter()
                .filter(|p| p.pick == Some(winner))
                .filter_map(|p| p.confidence)
                .collect();
            decision.arbiter_pick = Some(winner);
            decision.arbiter_confidence =
                (!confs.is_empty()).then(|| confs.iter().sum::<f64>() / confs.len() as f64);
            decision.chosen_cluster = winner;
            decision.chosen = dist.clusters()[winner].representative.clone();
            decision.override_ = winner != decision.majority_cluster;
        }
        None => {
            log::warn!("no arbiter produced a usable pick; executing the majority action");
            decision.fallback = true;
        }
    }
    decision.selector_picks = picks;
    Ok(decision)
}

/// Majority when the gate says the vote is confident enough, otherwise the
/// arbiter (or `k` arbiters).
pub fn catts_select(
    actx: &ArbiterContext,
    dist: &VoteDistribution,
    stats: &UncertaintyStats,
    gate: &GateConfig,
    setup: &ArbiterSetup<'_>,
    k: usize,
) -> Result<SelectionDecision, SelectionError> {
    gate.validate()?;
    let value = gate_value(stats, gate).ok();
    if should_arbitrate(stats, gate) {
        let mut d = arbiter_scaling_select(actx, dist, setup, k)?;
        d.gate_value = value;
        Ok(d)
    } else {
        Ok(majority_decision(dist, value))
    }
}

/// Trace confidence from per-token logprobs; token confidence is `exp(logprob)`.
pub fn trace_confidence(logprobs: &[f64], cfg: &DeepConfConfig) -> Result<f64, SelectionError> {
    if logprobs.is_empty() {
        return Err(SelectionError::EmptySequence);
    }
    let conf: Vec<f64> = logprobs.iter().map(|lp| lp.exp()).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let take = |frac: f64, of: usize| ((frac * of as f64 - 1e-9).ceil() as usize).clamp(1, of);
    Ok(match cfg.variant {
        DeepConfVariant::AverageTrace => mean(&conf),
        DeepConfVariant::Tail => {
            let k = take(cfg.tail_fraction, conf.len());
            mean(&conf[conf.len() - k..])
        }
        DeepConfVariant::BottomPercent => {
            let w = cfg.window.clamp(1, conf.len());
            let mut windows: Vec<f64> = conf.windows(w).map(mean).collect();
            windows.sort_by(f64::total_cmp);
            let k = take(cfg.bottom_fraction, windows.len());
            mean(&windows[..k])
        }
    })
}

/// Number of candidates kept by top-`eta` filtering.
pub fn survivor_count(eta: f64, n: usize) -> usize {
    ((eta * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Candidate indices sorted by confidence (descending, ties to lower index),
/// truncated to the top `eta` fraction.
pub fn filter_by_confidence(confidences: &[(usize, f64)], eta: f64) -> Vec<usize> {
    let mut ranked = confidences.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(survivor_count(eta, confidences.len()));
    ranked.into_iter().map(|(i, _)| i).collect()
}

/// Confidence-filtered (optionally weighted) vote. `logprobs` pairs every
/// parsed candidate index with its token logprobs.
pub fn deepconf_select(
    logprobs: &[(usize, Option<&[f64]>)],
    dist: &VoteDistribution,
    cfg: &DeepConfConfig,
) -> Result<SelectionDecision, SelectionError> {
    cfg.validate()?;
    let mut confidences = Vec::with_capacity(logprobs.len());
    for (i, lp) in logprobs {
        let lp = lp.ok_or(SelectionError::LogprobsUnavailable)?;
        confidences.push((*i, trace_confidence(lp, cfg)?));
    }
    let survivors = filter_by_confidence(&confidences, cfg.eta);
    let mut scores = vec![0.0; dist.len()];
    for &s in &survivors {
        let Some(cluster) = dist.clusters().iter().position(|c| c.member_indices.contains(&s))
        else {
            continue;
        };
        scores[cluster] += if cfg.weighted {
            confidences.iter().find(|(i, _)| *i == s).map_or(0.0, |(_, c)| *c)
        } else {
            1.0
        };
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let mut decision = majority_decision(dist, None);
    decision.route = Route::Deepconf;
    decision.chosen_cluster = best;
    decision.chosen = dist.clusters()[best].representative.clone();
    decision.deepconf = Some(DeepConfTrace { confidences, survivors, cluster_scores: scores });
    Ok(decision)
}

/// Everything a strategy may need for one step.
pub struct SelectionInput<'a> {
    pub dist: &'a VoteDistribution,
    pub stats: &'a UncertaintyStats,
    pub arbiter: &'a ArbiterContext,
    pub logprobs: &'a [(usize, Option<&'a [f64]>)],
    pub setup: Option<ArbiterSetup<'a>>,
}

pub fn select(strategy: &Strategy, input: &SelectionInput<'_>) -> Result<SelectionDecision, SelectionError> {
    strategy.validate()?;
    let setup = || input.setup.as_ref().ok_or(SelectionError::MissingBackend);
    match strategy {
        Strategy::Majority => Ok(majority_decision(input.dist, None)),
        Strategy::Arbiter { k } => arbiter_scaling_select(input.arbiter, input.dist, setup()?, *k),
        Strategy::Catts { gate, k } => {
            if should_arbitrate(input.stats, gate) {
                catts_select(input.arbiter, input.dist, input.stats, gate, setup()?, *k)
            } else {
                Ok(majority_decision(input.dist, gate_value(input.stats, gate).ok()))
            }
        }
        Strategy::DeepConf(cfg) => deepconf_select(input.logprobs, input.dist, cfg),
    }
}
