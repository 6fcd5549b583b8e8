//! The per-step agent loop and its JSONL trajectory log.
//!
//! Each step: observe, sample N candidates (each retried on validation
//! failure), cluster, compute vote statistics, select, execute.
//!
//! Log layout, one JSON object per line:
//!
//! ```text
//! {"type":"header", "format":"catts-episode", "version":1, "task_id":..., "config":{...}, ...}
//! {"type":"step", "step":0, "page_id":..., "candidates":[...], "clusters":[...], "stats":{...}, "decision":{...}, ...}
//! ...
//! {"type":"footer", "outcome":"success", "message":..., "ledger":{...}, "total_tokens":...}
//! ```
//!
//! `started_at_ms` / `finished_at_ms` are wall-clock timestamps. They are the
//! only nondeterministic fields and are ignored by record equality.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::action::{
    check_element_exists, check_repeat_loop, parse_candidate, render_action, Action,
    ValidationError,
};
use crate::cluster::{cluster_candidates, ActionCluster, DedupMode};
use crate::env::{digest, Environment, Observation, Outcome, ScenarioSpec, StepOutcome, Terminal};
use crate::llm::{CallContext, CallRole, GatewayError, LlmClient, Message, Role, TokenLedger, TokenUsage};
use crate::prompts::PromptSet;
use crate::select::{
    select, ArbiterContext, ArbiterSetup, SelectionDecision, SelectionError, SelectionInput,
    Strategy,
};
use crate::stats::{build_distribution, uncertainty, UncertaintyStats};

pub const LOG_FORMAT: &str = "catts-episode";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub n: usize,
    pub strategy: Strategy,
    pub dedup: DedupMode,
    pub seed: u64,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// An action repeated this many times in a row is rejected.
    pub repeat_window: usize,
    /// Total tries per candidate slot, including the first.
    pub max_attempts: usize,
    pub arbiter_reasks: usize,
    /// Overrides the scenario's step budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n: 10,
            strategy: Strategy::Majority,
            dedup: DedupMode::Exact,
            seed: 0,
            model: "scripted".into(),
            temperature: 1.0,
            max_tokens: 2048,
            repeat_window: 2,
            max_attempts: 5,
            arbiter_reasks: 2,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("n must be at least 1")]
    ZeroCandidates,
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error(transparent)]
    Strategy(#[from] SelectionError),
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::ZeroCandidates);
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::ZeroAttempts);
        }
        if self.max_steps == Some(0) {
            return Err(ConfigError::ZeroSteps);
        }
        self.strategy.validate()?;
        Ok(())
    }
}

/// Wall-clock milliseconds. Always compares equal, so records that differ
/// only in timestamps are equal.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub Option<u64>);

impl Timestamp {
    pub fn now() -> Self {
        let ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .ok();
        Self(ms)
    }

    pub fn is_none(&self) -> bool {
        self.0.is_none()
    }
}

impl PartialEq for Timestamp {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub slot: usize,
    /// Raw text of the last attempt.
    pub raw: String,
    pub parsed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    pub attempts: usize,
    /// Validation failures of the rejected attempts, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<ValidationError>,
    pub usage: TokenUsage,
    pub logprobs_present: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
}

/// What executing the chosen action did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEffect {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub page_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Terminal>,
    /// Digest of the next page text, or of `outcome:message` when terminal.
    pub digest: String,
}

impl StepEffect {
    fn from_outcome(outcome: &StepOutcome) -> Self {
        match outcome {
            StepOutcome::Continue(obs) => Self {
                page_id: Some(obs.page_id.clone()),
                feedback: obs.feedback.clone(),
                terminal: None,
                digest: digest(&obs.page_text),
            },
            StepOutcome::Terminal(t) => Self {
                page_id: None,
                feedback: None,
                terminal: Some(t.clone()),
                digest: digest(&format!("{}:{}", t.outcome, t.message)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub page_id: String,
    pub observation_digest: String,
    pub candidates: Vec<CandidateRecord>,
    pub parsed: usize,
    pub dropped: usize,
    /// Validation retries summed over slots.
    pub retries: usize,
    pub clusters: Vec<ActionCluster>,
    pub stats: UncertaintyStats,
    pub decision: SelectionDecision,
    pub dedup_calls: usize,
    pub dedup_fallback: bool,
    pub ledger: TokenLedger,
    pub effect: StepEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub task_id: String,
    pub intent: String,
    pub scenario_digest: String,
    pub strategy_label: String,
    pub config: AgentConfig,
    #[serde(default, skip_serializing_if = "Timestamp::is_none")]
    pub started_at_ms: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFooter {
    pub outcome: Outcome,
    pub message: String,
    pub steps: usize,
    pub ledger: TokenLedger,
    pub total_tokens: u64,
    /// Tokens of a step that failed before it could be recorded.
    #[serde(default, skip_serializing_if = "is_empty_ledger")]
    pub aborted_step_ledger: TokenLedger,
    #[serde(default, skip_serializing_if = "Timestamp::is_none")]
    pub finished_at_ms: Timestamp,
}

fn is_empty_ledger(l: &TokenLedger) -> bool {
    l.total().total() == 0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub footer: LogFooter,
}

impl EpisodeRecord {
    pub fn task_id(&self) -> &str {
        &self.header.task_id
    }

    pub fn outcome(&self) -> Outcome {
        self.footer.outcome
    }

    pub fn total_tokens(&self) -> u64 {
        self.footer.total_tokens
    }

    pub fn without_timestamps(&self) -> Self {
        let mut r = self.clone();
        r.header.started_at_ms = Timestamp(None);
        r.footer.finished_at_ms = Timestamp(None);
        r
    }
}

/// Why a step could not complete; the episode ends with outcome `error`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error("no valid action")]
    NoValidAction,
    #[error("candidate slot {slot}: {source}")]
    Candidate { slot: usize, source: GatewayError },
    #[error("dedup: {0}")]
    Dedup(#[from] crate::cluster::ClusterError),
    #[error("selection: {0}")]
    Selection(#[from] SelectionError),
}

/// Everything an episode needs besides the scenario.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub client: LlmClient,
    pub prompts: PromptSet,
}

struct History {
    actions: Vec<Action>,
    turns: Vec<Message>,
}

fn task_message(intent: &str) -> String {
    format!("Task: {intent}")
}

fn observation_message(obs: &Observation, steps_remaining: usize) -> String {
    let mut s = format!("Current page ({}):\n{}", obs.page_id, obs.page_text);
    if let Some(fb) = &obs.feedback {
        s.push_str(&format!("\n\nFeedback from the last action: {fb}"));
    }
    s.push_str(&format!("\n\nSteps remaining: {steps_remaining}"));
    s
}

fn retry_message(err: &ValidationError) -> String {
    format!(
        "Your previous reply was rejected ({}): {}\nReply again with your reasoning followed by exactly one function call.",
        err.check, err.feedback
    )
}

impl Agent {
    pub fn new(config: AgentConfig, client: LlmClient, prompts: PromptSet) -> Self {
        let mut client = client;
        client.model = config.model.clone();
        client.temperature = config.temperature;
        client.max_tokens = config.max_tokens;
        Self { config, client, prompts }
    }

    fn base_messages(&self, intent: &str, history: &History, obs: &Observation, remaining: usize) -> Vec<Message> {
        let mut m = vec![
            Message::new(Role::System, self.prompts.agent_system.clone()),
            Message::new(Role::Developer, self.prompts.agent_developer.clone()),
            Message::new(Role::User, task_message(intent)),
        ];
        m.extend(history.turns.iter().cloned());
        m.push(Message::new(Role::User, observation_message(obs, remaining)));
        m
    }

    fn sample_slot(
        &self,
        slot: usize,
        base: &[Message],
        obs: &Observation,
        executed: &[Action],
    ) -> Result<CandidateRecord, GatewayError> {
        let cfg = &self.config;
        let want_logprobs = cfg.strategy.needs_logprobs();
        let mut messages = base.to_vec();
        let mut record = CandidateRecord {
            slot,
            raw: String::new(),
            parsed: false,
            reasoning: None,
            action: None,
            attempts: 0,
            rejections: Vec::new(),
            usage: TokenUsage::default(),
            logprobs_present: false,
            logprobs: None,
        };
        for attempt in 0..cfg.max_attempts {
            let ctx = CallContext::new(CallRole::Candidate, obs.step, cfg.seed)
                .slot(slot, cfg.n)
                .attempt(attempt)
                .page(Some(obs.page_id.clone()));
            let done = self.client.complete(messages.clone(), want_logprobs, &ctx)?;
            record.attempts = attempt + 1;
            record.usage += done.response.usage;
            record.raw = done.response.text.clone();
            record.logprobs_present = done.response.logprobs.is_some();
            record.logprobs = done.response.logprobs.clone();
            let checked = parse_candidate(&done.response.text).and_then(|c| {
                check_element_exists(&c.action, &obs.known_ids)?;
                check_repeat_loop(&c.action, executed, cfg.repeat_window)?;
                Ok(c)
            });
            match checked {
                Ok(c) => {
                    record.parsed = true;
                    record.reasoning = Some(c.reasoning);
                    record.action = Some(c.action);
                    return Ok(record);
                }
                Err(e) => {
                    messages.push(Message::new(Role::Assistant, done.response.text));
                    messages.push(Message::new(Role::User, retry_message(&e)));
                    record.rejections.push(e);
                }
            }
        }
        Ok(record)
    }

    /// Sample, cluster, score and select for the current observation, then
    /// execute. `ledger` receives usage even when the step fails.
    fn run_step(
        &self,
        env: &mut Environment,
        history: &History,
        ledger: &mut TokenLedger,
    ) -> Result<(StepRecord, StepOutcome), StepError> {
        let cfg = &self.config;
        let obs = env.observe();
        let intent = env.spec().intent.clone();
        let base = self.base_messages(&intent, history, &obs, env.steps_remaining());

        let results: Vec<Result<CandidateRecord, GatewayError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.n)
                .map(|slot| {
                    let (base, obs, executed) = (&base, &obs, &history.actions);
                    scope.spawn(move || self.sample_slot(slot, base, obs, executed))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sampling thread panicked")).collect()
        });
        let mut candidates = Vec::with_capacity(cfg.n);
        let mut failure = None;
        for (slot, r) in results.into_iter().enumerate() {
            match r {
                Ok(c) => {
                    ledger.record(CallRole::Candidate, c.usage);
                    candidates.push(c);
                }
                Err(e) => {
                    failure.get_or_insert(StepError::Candidate { slot, source: e });
                }
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        let parsed: Vec<(usize, Action)> = candidates
            .iter()
            .filter_map(|c| c.action.clone().map(|a| (c.slot, a)))
            .collect();
        if parsed.is_empty() {
            return Err(StepError::NoValidAction);
        }

        let dedup_ctx = CallContext::new(CallRole::Dedup, obs.step, cfg.seed).page(Some(obs.page_id.clone()));
        let clustered = cluster_candidates(&parsed, cfg.dedup, Some((&self.client, &self.prompts)), &dedup_ctx)?;
        ledger.record(CallRole::Dedup, clustered.dedup_usage);
        let dist = build_distribution(clustered.clusters.clone()).map_err(|_| StepError::NoValidAction)?;
        let stats = uncertainty(&dist);

        let arbiter_ctx = ArbiterContext {
            intent,
            previous_actions: history.actions.iter().map(render_action).collect(),
            page_text: obs.page_text.clone(),
        };
        let call = CallContext::new(CallRole::Arbiter, obs.step, cfg.seed).page(Some(obs.page_id.clone()));
        let logprobs: Vec<(usize, Option<&[f64]>)> = candidates
            .iter()
            .filter(|c| c.parsed)
            .map(|c| (c.slot, c.logprobs.as_deref()))
            .collect();
        let input = SelectionInput {
            dist: &dist,
            stats: &stats,
            arbiter: &arbiter_ctx,
            logprobs: &logprobs,
            setup: Some(ArbiterSetup {
                client: &self.client,
                prompts: &self.prompts,
                call: &call,
                reasks: cfg.arbiter_reasks,
            }),
        };
        let decision = select(&cfg.strategy, &input)?;
        ledger.record(CallRole::Arbiter, decision.arbiter_usage);

        let outcome = env.apply_action(&decision.chosen);
        let mut step_ledger = TokenLedger::new();
        step_ledger.record(CallRole::Candidate, candidates.iter().map(|c| c.usage).sum());
        step_ledger.record(CallRole::Dedup, clustered.dedup_usage);
        step_ledger.record(CallRole::Arbiter, decision.arbiter_usage);
        let record = StepRecord {
            step: obs.step,
            page_id: obs.page_id.clone(),
            observation_digest: digest(&obs.page_text),
            parsed: parsed.len(),
            dropped: candidates.len() - parsed.len(),
            retries: candidates.iter().map(|c| c.attempts.saturating_sub(1)).sum(),
            candidates,
            clusters: clustered.clusters,
            stats,
            decision,
            dedup_calls: clustered.dedup_calls,
            dedup_fallback: clustered.fallback,
            ledger: step_ledger,
            effect: StepEffect::from_outcome(&outcome),
        };
        Ok((record, outcome))
    }

    /// Run one episode to a terminal outcome. Step failures end the episode
    /// with outcome `error`; the steps before it are kept.
    pub fn run_episode(&self, spec: &ScenarioSpec) -> Result<EpisodeRecord, ConfigError> {
        self.config.validate()?;
        let started = Timestamp::now();
        let mut spec = spec.clone();
        if let Some(m) = self.config.max_steps {
            spec.max_steps = Some(m);
        }
        let scenario_digest = digest(&serde_json::to_string(&spec).expect("scenario serializes"));
        let mut env = Environment::new(spec.clone()).expect("validated scenario");
        let mut history = History { actions: Vec::new(), turns: Vec::new() };
        let mut steps = Vec::new();
        let mut ledger = TokenLedger::new();
        let mut aborted = TokenLedger::new();
        let terminal = loop {
            let mut step_ledger = TokenLedger::new();
            match self.run_step(&mut env, &history, &mut step_ledger) {
                Ok((record, outcome)) => {
                    ledger.merge(&step_ledger);
                    let chosen = record.decision.chosen.clone();
                    let reasoning = record
                        .candidates
                        .iter()
                        .find(|c| c.slot == record.clusters[record.decision.chosen_cluster].member_indices[0])
                        .and_then(|c| c.reasoning.clone())
                        .unwrap_or_default();
                    history.turns.push(Message::new(
                        Role::Assistant,
                        format!("{}\n{}", reasoning.trim_end(), render_action(&chosen)),
                    ));
                    history.turns.push(Message::new(
                        Role::Tool,
                        format!(
                            "Executed {} on page {} (observation {}).",
                            render_action(&chosen),
                            record.page_id,
                            &record.observation_digest[..12]
                        ),
                    ));
                    history.actions.push(chosen);
                    steps.push(record);
                    if let StepOutcome::Terminal(t) = outcome {
                        break t;
                    }
                }
                Err(e) => {
                    ledger.merge(&step_ledger);
                    aborted = step_ledger;
                    log::error!("{}: step {} failed: {e}", spec.task_id, env.steps_taken());
                    break Terminal { outcome: Outcome::Error, message: e.to_string() };
                }
            }
        };
        let total_tokens = ledger.total().total();
        Ok(EpisodeRecord {
            header: LogHeader {
                format: LOG_FORMAT.into(),
                version: LOG_VERSION,
                task_id: spec.task_id.clone(),
                intent: spec.intent.clone(),
                scenario_digest,
                strategy_label: self.config.strategy.label(),
                config: self.config.clone(),
                started_at_ms: started,
            },
            footer: LogFooter {
                outcome: terminal.outcome,
                message: terminal.message,
                steps: steps.len(),
                ledger,
                total_tokens,
                aborted_step_ledger: aborted,
                finished_at_ms: Timestamp::now(),
            },
            steps,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header(LogHeader),
    Step(Box<StepRecord>),
    Footer(LogFooter),
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log is truncated; last good line is {last_good_line}")]
    Truncated { last_good_line: usize },
}

pub fn write_log(record: &EpisodeRecord, mut out: impl Write) -> std::io::Result<()> {
    let mut line = |l: &LogLine| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")
    };
    line(&LogLine::Header(record.header.clone()))?;
    for s in &record.steps {
        line(&LogLine::Step(Box::new(s.clone())))?;
    }
    line(&LogLine::Footer(record.footer.clone()))?;
    out.flush()
}

pub fn log_to_string(record: &EpisodeRecord) -> String {
    let mut buf = Vec::new();
    write_log(record, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_log(input: impl BufRead) -> Result<EpisodeRecord, LogError> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut last_good = 0;
    let mut lines = input.lines().enumerate().peekable();
    while let Some((i, line)) = lines.next() {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = match serde_json::from_str(&line) {
            Ok(l) => l,
            Err(e) if e.is_eof() && lines.peek().is_none() => {
                return Err(LogError::Truncated { last_good_line: last_good })
            }
            Err(e) => return Err(LogError::Parse { line: n, message: e.to_string() }),
        };
        match (parsed, &header) {
            (LogLine::Header(h), None) => {
                if h.format != LOG_FORMAT || h.version != LOG_VERSION {
                    return Err(LogError::Parse {
                        line: n,
                        message: format!("unsupported log format {} v{}", h.format, h.version),
                    });
                }
                header = Some(h);
            }
            (LogLine::Step(s), Some(_)) => steps.push(*s),
            (LogLine::Footer(footer), Some(_)) => {
                if let Some((j, extra)) = lines.find(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty())) {
                    extra?;
                    return Err(LogError::Parse { line: j + 1, message: "content after footer".into() });
                }
                return Ok(EpisodeRecord { header: header.expect("checked"), steps, footer });
            }
            (_, None) => return Err(LogError::Parse { line: n, message: "first line must be the header".into() }),
            (LogLine::Header(_), Some(_)) => {
                return Err(LogError::Parse { line: n, message: "duplicate header".into() })
            }
        }
        last_good = n;
    }
    Err(LogError::Truncated { last_good_line: last_good })
}

pub fn read_log_file(path: &std::path::Path) -> Result<EpisodeRecord, LogError> {
    let f = std::fs::File::open(path)?;
    read_log(std::io::BufReader::new(f))
}

/// First point where re-executing a log against a scenario disagrees with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "divergence at step {}: {}", self.step, self.reason)
    }
}

/// Re-execute the recorded decisions and check observations, effects and the
/// final outcome against the log.
pub fn replay(record: &EpisodeRecord, spec: &ScenarioSpec) -> Result<(), Divergence> {
    let mut spec = spec.clone();
    if let Some(m) = record.header.config.max_steps {
        spec.max_steps = Some(m);
    }
    let scenario_digest = digest(&serde_json::to_string(&spec).expect("scenario serializes"));
    let mut env = Environment::new(spec)
        .map_err(|e| Divergence { step: 0, reason: format!("scenario invalid: {e}") })?;
    let diverge = |step: usize, reason: String| Divergence { step, reason };
    if scenario_digest != record.header.scenario_digest {
        return Err(diverge(0, "scenario digest differs from the one recorded".into()));
    }
    for (i, s) in record.steps.iter().enumerate() {
        if s.step != i {
            return Err(diverge(i, format!("step index {} out of sequence", s.step)));
        }
        let obs = env.observe();
        if obs.page_id != s.page_id || digest(&obs.page_text) != s.observation_digest {
            return Err(diverge(i, format!("observation differs (page {} vs logged {})", obs.page_id, s.page_id)));
        }
        let chosen = &s.decision.chosen;
        match s.clusters.get(s.decision.chosen_cluster) {
            Some(c) if &c.representative == chosen => {}
            _ => return Err(diverge(i, format!("chosen action {chosen} is not the representative of its cluster"))),
        }
        let outcome = env.apply_action(chosen);
        let effect = StepEffect::from_outcome(&outcome);
        if effect != s.effect {
            return Err(diverge(i, format!("effect of {chosen} differs from the log")));
        }
        if let StepOutcome::Terminal(t) = outcome {
            if i + 1 != record.steps.len() {
                return Err(diverge(i, "episode ended earlier than logged".into()));
            }
            if t.outcome != record.footer.outcome {
                return Err(diverge(i, format!("outcome {} vs logged {}", t.outcome, record.footer.outcome)));
            }
            return Ok(());
        }
    }
    if record.footer.outcome == Outcome::Error {
        return Ok(());
    }
    Err(diverge(record.steps.len(), "log ends before a terminal outcome".into()))
}
