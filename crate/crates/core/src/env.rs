//! Scriptable offline web environment.
//!
//! A scenario is one TOML document holding the page graph, the success
//! condition, and the scripted model responses for offline runs:
//!
//! ```toml
//! version = 1
//! task_id = "find-widget"
//! intent = "Open the widget page and report its name."
//! start = "home"
//! max_steps = 10              # optional, default 15
//!
//! [success]                   # at least one of the two keys
//! exit_pattern = "(?i)widget" # regex searched in the exit message
//! terminal_page = "widget"    # page the agent must be on when exiting
//!
//! [[pages]]
//! id = "home"
//! text = "Welcome."
//! elements = [{ id = "3", kind = "link", label = "Widgets" }]
//!
//! [[transitions]]
//! page = "home"
//! action = 'click(element_id="3")'
//! next = "widget"             # or: feedback = "text shown to the agent"
//!
//! [[script]]                  # see llm::scripted for the entry fields
//! role = "candidate"
//! responses = [{ text = "..." }]
//! ```
//!
//! Transition actions are canonical call text. A text payload of `"*"`
//! matches any text; exact patterns take precedence over wildcards.
//! `go_back()` and `exit(...)` are built in and cannot be given transitions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{render_action, Action, ActionKind};
use crate::llm::ScriptEntry;

pub const SCENARIO_VERSION: u32 = 1;
pub const DEFAULT_MAX_STEPS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element {
    pub id: String,
    pub kind: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub elements: Vec<Element>,
}

impl Page {
    /// Cleaned page text shown to the model: the page text followed by one
    /// line per interactive element.
    pub fn render(&self) -> String {
        let mut out = self.text.trim_end().to_string();
        for e in &self.elements {
            out.push_str(&format!("\n<{} id=\"{}\">{}</{}>", e.kind, e.id, e.label, e.kind));
        }
        out
    }

    pub fn element_ids(&self) -> BTreeSet<String> {
        self.elements.iter().map(|e| e.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub page: String,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessCondition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_page: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub version: u32,
    pub task_id: String,
    pub intent: String,
    pub start: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub success: SuccessCondition,
    pub pages: Vec<Page>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), message: message.into() }
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

/// Parse and validate a scenario document.
pub fn load_scenario(source: &str) -> Result<ScenarioSpec, ScenarioError> {
    let spec: ScenarioSpec = toml::from_str(source).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(source, s.start));
        ScenarioError::Syntax { line, column, message: e.message().trim().to_string() }
    })?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let source = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_scenario(&source)
}

/// A transition action pattern, pre-parsed.
#[derive(Debug, Clone, PartialEq)]
struct Pattern {
    canonical: String,
    kind: ActionKind,
    wildcard: Option<Action>,
}

fn parse_pattern(text: &str) -> Result<Pattern, String> {
    let action: Action = text.parse().map_err(|e: crate::action::ValidationError| e.feedback)?;
    let wildcard = (action.payload() == Some("*")).then(|| action.clone());
    Ok(Pattern { canonical: render_action(&action), kind: action.kind(), wildcard })
}

fn wildcard_matches(pattern: &Action, action: &Action) -> bool {
    pattern.kind() == action.kind() && pattern.element_id() == action.element_id()
}

impl ScenarioSpec {
    pub fn max_steps(&self) -> usize {
        self.max_steps.unwrap_or(DEFAULT_MAX_STEPS)
    }

    pub fn page(&self, id: &str) -> Option<&Page> {
        self.pages.iter().find(|p| p.id == id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported version {} (expected {SCENARIO_VERSION})", self.version),
            ));
        }
        if self.max_steps == Some(0) {
            return Err(invalid("max_steps", "must be at least 1"));
        }
        let mut ids = BTreeSet::new();
        for (i, page) in self.pages.iter().enumerate() {
            if !ids.insert(page.id.as_str()) {
                return Err(invalid(format!("pages[{i}].id"), format!("duplicate page id {:?}", page.id)));
            }
            let mut element_ids = BTreeSet::new();
            for (j, e) in page.elements.iter().enumerate() {
                let field = format!("pages[{i}].elements[{j}].id");
                if e.id.is_empty() || !e.id.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(invalid(field, format!("element id {:?} is not a digit string", e.id)));
                }
                if !element_ids.insert(e.id.as_str()) {
                    return Err(invalid(field, format!("duplicate element id {:?} on page {:?}", e.id, page.id)));
                }
            }
        }
        if !ids.contains(self.start.as_str()) {
            return Err(invalid("start", format!("unknown page {:?}", self.start)));
        }
        match (&self.success.exit_pattern, &self.success.terminal_page) {
            (None, None) => {
                return Err(invalid("success", "needs exit_pattern and/or terminal_page"))
            }
            (pattern, page) => {
                if let Some(p) = pattern {
                    Regex::new(p).map_err(|e| invalid("success.exit_pattern", e.to_string()))?;
                }
                if let Some(p) = page {
                    if !ids.contains(p.as_str()) {
                        return Err(invalid("success.terminal_page", format!("unknown page {p:?}")));
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (i, t) in self.transitions.iter().enumerate() {
            let field = |f: &str| format!("transitions[{i}].{f}");
            if !ids.contains(t.page.as_str()) {
                return Err(invalid(field("page"), format!("unknown page {:?}", t.page)));
            }
            let pattern = parse_pattern(&t.action).map_err(|m| invalid(field("action"), m))?;
            if matches!(pattern.kind, ActionKind::GoBack | ActionKind::Exit) {
                return Err(invalid(field("action"), "go_back and exit are built in"));
            }
            if !seen.insert((t.page.clone(), pattern.canonical.clone())) {
                return Err(invalid(field("action"), format!("duplicate transition for {}", pattern.canonical)));
            }
            match (&t.next, &t.feedback) {
                (Some(next), None) => {
                    if !ids.contains(next.as_str()) {
                        return Err(invalid(field("next"), format!("unknown page {next:?}")));
                    }
                }
                (None, Some(_)) => {}
                _ => return Err(invalid(field("next"), "exactly one of next or feedback is required")),
            }
        }
        for (i, s) in self.script.iter().enumerate() {
            if let Some(p) = &s.page {
                if !ids.contains(p.as_str()) {
                    return Err(invalid(format!("script[{i}].page"), format!("unknown page {p:?}")));
                }
            }
            if s.responses.is_empty() {
                return Err(invalid(format!("script[{i}].responses"), "must not be empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    BudgetExhausted,
    Error,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::BudgetExhausted => "budget_exhausted",
            Outcome::Error => "error",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub page_id: String,
    pub page_text: String,
    pub known_ids: BTreeSet<String>,
    pub feedback: Option<String>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminal {
    pub outcome: Outcome,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue(Observation),
    Terminal(Terminal),
}

/// Hex SHA-256 of a text, used to fingerprint observations.
pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub const NO_STATE_CHANGE: &str = "no state change";
pub const NO_PREVIOUS_PAGE: &str = "no previous page";
pub const BUDGET_EXHAUSTED: &str = "budget exhausted";

/// One episode's mutable state over a scenario.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: ScenarioSpec,
    success_re: Option<Regex>,
    /// page id -> (pattern, transition index)
    table: BTreeMap<String, Vec<(Pattern, usize)>>,
    current: String,
    history: Vec<String>,
    steps_taken: usize,
    feedback: Option<String>,
    terminal: Option<Terminal>,
}

impl Environment {
    pub fn new(spec: ScenarioSpec) -> Result<Self, ScenarioError> {
        spec.validate()?;
        let success_re = spec
            .success
            .exit_pattern
            .as_deref()
            .map(|p| Regex::new(p).expect("validated"));
        let mut table: BTreeMap<String, Vec<(Pattern, usize)>> = BTreeMap::new();
        for (i, t) in spec.transitions.iter().enumerate() {
            let p = parse_pattern(&t.action).expect("validated");
            table.entry(t.page.clone()).or_default().push((p, i));
        }
        let current = spec.start.clone();
        Ok(Self {
            spec,
            success_re,
            table,
            current,
            history: Vec::new(),
            steps_taken: 0,
            feedback: None,
            terminal: None,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn current_page(&self) -> &Page {
        self.spec.page(&self.current).expect("current page exists")
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn steps_remaining(&self) -> usize {
        self.spec.max_steps().saturating_sub(self.steps_taken)
    }

    pub fn terminal(&self) -> Option<&Terminal> {
        self.terminal.as_ref()
    }

    pub fn observe(&self) -> Observation {
        let page = self.current_page();
        Observation {
            page_id: page.id.clone(),
            page_text: page.render(),
            known_ids: page.element_ids(),
            feedback: self.feedback.clone(),
            step: self.steps_taken,
        }
    }

    fn finish(&mut self, outcome: Outcome, message: impl Into<String>) -> StepOutcome {
        let t = Terminal { outcome, message: message.into() };
        self.terminal = Some(t.clone());
        StepOutcome::Terminal(t)
    }

    fn find_transition(&self, action: &Action) -> Option<&Transition> {
        let patterns = self.table.get(&self.current)?;
        let canonical = render_action(action);
        patterns
            .iter()
            .find(|(p, _)| p.canonical == canonical)
            .or_else(|| {
                patterns
                    .iter()
                    .find(|(p, _)| p.wildcard.as_ref().is_some_and(|w| wildcard_matches(w, action)))
            })
            .map(|(_, i)| &self.spec.transitions[*i])
    }

    /// Execute one action. Calling this after a terminal outcome returns
    /// that outcome again.
    pub fn apply_action(&mut self, action: &Action) -> StepOutcome {
        if let Some(t) = &self.terminal {
            return StepOutcome::Terminal(t.clone());
        }
        if let Action::Exit { message } = action {
            let pattern_ok = self.success_re.as_ref().is_none_or(|re| re.is_match(message));
            let page_ok = self.spec.success.terminal_page.as_ref().is_none_or(|p| *p == self.current);
            return if pattern_ok && page_ok {
                self.finish(Outcome::Success, message.clone())
            } else {
                self.finish(Outcome::Failure, format!("exit did not meet the success condition: {message}"))
            };
        }
        self.steps_taken += 1;
        self.feedback = None;
        if let Some(id) = action.element_id() {
            if !self.current_page().element_ids().contains(id.as_str()) {
                self.feedback = Some(format!("element {id} is not on this page"));
            }
        }
        if self.feedback.is_none() {
            if let Action::GoBack = action {
                match self.history.pop() {
                    Some(prev) => self.current = prev,
                    None => self.feedback = Some(NO_PREVIOUS_PAGE.into()),
                }
            } else {
                match self.find_transition(action).cloned() {
                    Some(Transition { next: Some(next), .. }) => {
                        self.history.push(std::mem::replace(&mut self.current, next));
                    }
                    Some(Transition { feedback: Some(fb), .. }) => self.feedback = Some(fb),
                    _ => self.feedback = Some(NO_STATE_CHANGE.into()),
                }
            }
        }
        if self.steps_remaining() == 0 {
            return self.finish(Outcome::BudgetExhausted, BUDGET_EXHAUSTED);
        }
        StepOutcome::Continue(self.observe())
    }
}
