//! Structured web action space, model-output parsing, and per-step validation.
//!
//! Actions travel as a single function-call line:
//!
//! ```text
//! click(element_id="15")
//! type_text(element_id="7", text="oat milk")
//! scroll(direction="down")
//! go_back()
//! exit(message="N/A")
//! ```
//!
//! Values are always double-quoted; `\"`, `\\`, `\n`, `\t` and `\r` are the only
//! escapes. Any nonempty text before the call line is the reasoning segment.
//! A channel-delimited transcript (`<|channel|>analysis<|message|>...`) is also
//! accepted; there the reasoning comes from the `analysis` channel and the call
//! from `commentary`, either in the syntax above or as
//! `to=functions.<tool>` followed by a JSON argument object.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Injected element identifier: a nonempty run of ASCII digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ElementId(String);

impl From<ElementId> for String {
    fn from(id: ElementId) -> String {
        id.0
    }
}

impl TryFrom<String> for ElementId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        ElementId::new(s.clone()).ok_or_else(|| format!("invalid element id {s:?}"))
    }
}

impl ElementId {
    pub fn new(id: impl Into<String>) -> Option<Self> {
        let id = id.into();
        if !id.is_empty() && id.bytes().all(|b| b.is_ascii_digit()) {
            Some(Self(id))
        } else {
            None
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// Variant tag of an [`Action`], in tool-name form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    TypeText,
    Hover,
    Scroll,
    SelectDropdownOption,
    Search,
    GoBack,
    Exit,
}

impl ActionKind {
    pub const ALL: [ActionKind; 8] = [
        ActionKind::Click,
        ActionKind::TypeText,
        ActionKind::Hover,
        ActionKind::Scroll,
        ActionKind::SelectDropdownOption,
        ActionKind::Search,
        ActionKind::GoBack,
        ActionKind::Exit,
    ];

    pub fn tool_name(self) -> &'static str {
        match self {
            ActionKind::Click => "click",
            ActionKind::TypeText => "type_text",
            ActionKind::Hover => "hover",
            ActionKind::Scroll => "scroll",
            ActionKind::SelectDropdownOption => "select_dropdown_option",
            ActionKind::Search => "search",
            ActionKind::GoBack => "go_back",
            ActionKind::Exit => "exit",
        }
    }

    pub fn from_tool_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tool_name() == name)
    }

    /// Argument names in canonical order.
    pub fn fields(self) -> &'static [&'static str] {
        match self {
            ActionKind::Click | ActionKind::Hover => &["element_id"],
            ActionKind::TypeText | ActionKind::Search => &["element_id", "text"],
            ActionKind::SelectDropdownOption => &["element_id", "value"],
            ActionKind::Scroll => &["direction"],
            ActionKind::GoBack => &[],
            ActionKind::Exit => &["message"],
        }
    }
}

/// One executable web action. Serializes as its canonical call text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Action {
    Click { element_id: ElementId },
    TypeText { element_id: ElementId, text: String },
    Hover { element_id: ElementId },
    Scroll { direction: Direction },
    SelectDropdownOption { element_id: ElementId, value: String },
    Search { element_id: ElementId, text: String },
    GoBack,
    Exit { message: String },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::TypeText { .. } => ActionKind::TypeText,
            Action::Hover { .. } => ActionKind::Hover,
            Action::Scroll { .. } => ActionKind::Scroll,
            Action::SelectDropdownOption { .. } => ActionKind::SelectDropdownOption,
            Action::Search { .. } => ActionKind::Search,
            Action::GoBack => ActionKind::GoBack,
            Action::Exit { .. } => ActionKind::Exit,
        }
    }

    pub fn element_id(&self) -> Option<&ElementId> {
        match self {
            Action::Click { element_id }
            | Action::TypeText { element_id, .. }
            | Action::Hover { element_id }
            | Action::SelectDropdownOption { element_id, .. }
            | Action::Search { element_id, .. } => Some(element_id),
            Action::Scroll { .. } | Action::GoBack | Action::Exit { .. } => None,
        }
    }

    /// The free-text argument, if the variant carries one.
    pub fn payload(&self) -> Option<&str> {
        match self {
            Action::TypeText { text, .. } | Action::Search { text, .. } => Some(text),
            Action::SelectDropdownOption { value, .. } => Some(value),
            Action::Exit { message } => Some(message),
            _ => None,
        }
    }

    /// Arguments in canonical order as `(name, value)` pairs.
    pub fn args(&self) -> Vec<(&'static str, &str)> {
        match self {
            Action::Click { element_id } | Action::Hover { element_id } => {
                vec![("element_id", element_id.as_str())]
            }
            Action::TypeText { element_id, text } | Action::Search { element_id, text } => {
                vec![("element_id", element_id.as_str()), ("text", text)]
            }
            Action::SelectDropdownOption { element_id, value } => {
                vec![("element_id", element_id.as_str()), ("value", value)]
            }
            Action::Scroll { direction } => vec![("direction", direction.as_str())],
            Action::GoBack => vec![],
            Action::Exit { message } => vec![("message", message)],
        }
    }

    /// Build an action from a tool name and its argument list, enforcing the schema.
    pub fn from_call(name: &str, args: &[(String, String)]) -> Result<Self, ValidationError> {
        let kind = ActionKind::from_tool_name(name).ok_or_else(|| {
            ValidationError::schema(format!("unknown tool `{name}`"))
        })?;
        let expected = kind.fields();
        for (i, (key, _)) in args.iter().enumerate() {
            if !expected.contains(&key.as_str()) {
                return Err(ValidationError::schema(format!(
                    "`{name}` does not take argument `{key}`"
                )));
            }
            if args[..i].iter().any(|(k, _)| k == key) {
                return Err(ValidationError::schema(format!(
                    "argument `{key}` given more than once"
                )));
            }
        }
        let get = |field: &str| -> Result<&str, ValidationError> {
            args.iter()
                .find(|(k, _)| k == field)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| {
                    ValidationError::schema(format!("`{name}` requires argument `{field}`"))
                })
        };
        let element = || -> Result<ElementId, ValidationError> {
            let raw = get("element_id")?;
            ElementId::new(raw).ok_or_else(|| {
                ValidationError::schema(format!(
                    "element_id must be the integer id shown in the HTML, got \"{raw}\""
                ))
            })
        };
        Ok(match kind {
            ActionKind::Click => Action::Click { element_id: element()? },
            ActionKind::Hover => Action::Hover { element_id: element()? },
            ActionKind::TypeText => Action::TypeText {
                element_id: element()?,
                text: get("text")?.to_string(),
            },
            ActionKind::Search => Action::Search {
                element_id: element()?,
                text: get("text")?.to_string(),
            },
            ActionKind::SelectDropdownOption => Action::SelectDropdownOption {
                element_id: element()?,
                value: get("value")?.to_string(),
            },
            ActionKind::Scroll => {
                let direction = match get("direction")? {
                    "up" => Direction::Up,
                    "down" => Direction::Down,
                    other => {
                        return Err(ValidationError::schema(format!(
                            "direction must be \"up\" or \"down\", got \"{other}\""
                        )))
                    }
                };
                Action::Scroll { direction }
            }
            ActionKind::GoBack => Action::GoBack,
            ActionKind::Exit => Action::Exit {
                message: get("message")?.to_string(),
            },
        })
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_action(self))
    }
}

impl From<Action> for String {
    fn from(action: Action) -> Self {
        render_action(&action)
    }
}

impl TryFrom<String> for Action {
    type Error = ValidationError;

    fn try_from(text: String) -> Result<Self, Self::Error> {
        text.parse()
    }
}

impl FromStr for Action {
    type Err = ValidationError;

    /// Parses a bare call line (no reasoning required).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let calls = scan_line(s.trim()).ok_or_else(|| {
            ValidationError::schema(format!("not a function call: `{}`", s.trim()))
        })?;
        match calls.as_slice() {
            [call] => call.to_action(),
            _ => Err(ValidationError::call_count(calls.len())),
        }
    }
}

/// Names of the per-step validation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    MustCallExactlyOneTool,
    InvalidActionSchema,
    ElementMustExist,
    MustProvideReasoning,
    RepeatingActionLoop,
}

impl CheckName {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::MustCallExactlyOneTool => "must_call_exactly_one_tool",
            CheckName::InvalidActionSchema => "invalid_action_schema",
            CheckName::ElementMustExist => "element_must_exist",
            CheckName::MustProvideReasoning => "must_provide_reasoning",
            CheckName::RepeatingActionLoop => "repeating_action_loop",
        }
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A failed validation check plus the feedback echoed into the retry prompt.
///
/// Feedback texts are stable:
///
/// | check | feedback |
/// |---|---|
/// | `must_call_exactly_one_tool` | `Expected exactly one function call, found {n}. Emit exactly one function call per step.` |
/// | `invalid_action_schema` | `Invalid function call: {detail}.` |
/// | `element_must_exist` | `Element id "{id}" does not exist in the latest HTML. Use an id shown on the current page.` |
/// | `must_provide_reasoning` | `Write your reasoning before the function call.` |
/// | `repeating_action_loop` | `The action {action} was just executed {window} times in a row. Do not repeat an ineffective action; choose a different one.` |
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
#[error("{check}: {feedback}")]
pub struct ValidationError {
    pub check: CheckName,
    pub feedback: String,
}

impl ValidationError {
    fn call_count(found: usize) -> Self {
        Self {
            check: CheckName::MustCallExactlyOneTool,
            feedback: format!(
                "Expected exactly one function call, found {found}. Emit exactly one function call per step."
            ),
        }
    }

    fn schema(detail: String) -> Self {
        Self {
            check: CheckName::InvalidActionSchema,
            feedback: format!("Invalid function call: {detail}."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCandidate {
    pub reasoning: String,
    pub action: Action,
}

/// Parse a full assistant turn into reasoning plus exactly one action.
///
/// Checks run in order: call count, argument schema, reasoning presence.
pub fn parse_candidate(raw_model_output: &str) -> Result<ParsedCandidate, ValidationError> {
    let (reasoning, calls) = if raw_model_output.contains(CHANNEL) {
        scan_channels(raw_model_output)
    } else {
        scan_plain(raw_model_output)
    };
    if calls.len() != 1 {
        return Err(ValidationError::call_count(calls.len()));
    }
    let action = calls[0].to_action()?;
    let reasoning = reasoning.trim().to_string();
    if reasoning.is_empty() {
        return Err(ValidationError {
            check: CheckName::MustProvideReasoning,
            feedback: "Write your reasoning before the function call.".to_string(),
        });
    }
    Ok(ParsedCandidate { reasoning, action })
}

/// Ok iff the action targets no element or targets one of `known_ids`.
pub fn check_element_exists(
    action: &Action,
    known_ids: &BTreeSet<String>,
) -> Result<(), ValidationError> {
    match action.element_id() {
        Some(id) if !known_ids.contains(id.as_str()) => Err(ValidationError {
            check: CheckName::ElementMustExist,
            feedback: format!(
                "Element id \"{id}\" does not exist in the latest HTML. Use an id shown on the current page."
            ),
        }),
        _ => Ok(()),
    }
}

/// Rejects `action` when it equals each of the last `window` executed actions.
pub fn check_repeat_loop(
    action: &Action,
    history: &[Action],
    window: usize,
) -> Result<(), ValidationError> {
    if window == 0 || history.len() < window {
        return Ok(());
    }
    if history[history.len() - window..].iter().all(|a| a == action) {
        return Err(ValidationError {
            check: CheckName::RepeatingActionLoop,
            feedback: format!(
                "The action {action} was just executed {window} times in a row. Do not repeat an ineffective action; choose a different one."
            ),
        });
    }
    Ok(())
}

/// Canonical call text for an action.
pub fn render_action(action: &Action) -> String {
    let mut out = String::from(action.kind().tool_name());
    out.push('(');
    for (i, (key, value)) in action.args().into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(key);
        out.push_str("=\"");
        for c in value.chars() {
            match c {
                '"' => out.push_str("\\\""),
                '\\' => out.push_str("\\\\"),
                '\n' => out.push_str("\\n"),
                '\t' => out.push_str("\\t"),
                '\r' => out.push_str("\\r"),
                c => out.push(c),
            }
        }
        out.push('"');
    }
    out.push(')');
    out
}

// ---------------------------------------------------------------------------
// Scanning

const CHANNEL: &str = "<|channel|>";
const MESSAGE: &str = "<|message|>";
const TERMINATORS: [&str; 4] = ["<|end|>", "<|call|>", "<|return|>", "<|start|>"];

#[derive(Debug)]
enum RawCall {
    Parsed { name: String, args: Vec<(String, String)> },
    Malformed(String),
}

impl RawCall {
    fn to_action(&self) -> Result<Action, ValidationError> {
        match self {
            RawCall::Parsed { name, args } => Action::from_call(name, args),
            RawCall::Malformed(detail) => Err(ValidationError::schema(detail.clone())),
        }
    }
}

fn scan_plain(text: &str) -> (String, Vec<RawCall>) {
    let mut reasoning = String::new();
    let mut calls = Vec::new();
    for line in text.lines() {
        match scan_line(line) {
            Some(found) => calls.extend(found),
            None if calls.is_empty() => {
                reasoning.push_str(line);
                reasoning.push('\n');
            }
            None => {}
        }
    }
    (reasoning, calls)
}

fn scan_channels(text: &str) -> (String, Vec<RawCall>) {
    let mut reasoning = String::new();
    let mut calls = Vec::new();
    for segment in text.split(CHANNEL).skip(1) {
        let (header, body) = match segment.find(MESSAGE) {
            Some(pos) => (&segment[..pos], &segment[pos + MESSAGE.len()..]),
            None => (segment, ""),
        };
        let end = TERMINATORS
            .iter()
            .filter_map(|t| body.find(t))
            .min()
            .unwrap_or(body.len());
        let body = &body[..end];
        let channel = header.split_whitespace().next().unwrap_or("");
        match channel {
            "analysis" => {
                reasoning.push_str(body);
                reasoning.push('\n');
            }
            "commentary" => {
                if let Some(name) = header
                    .split_whitespace()
                    .find_map(|tok| tok.strip_prefix("to=functions."))
                {
                    calls.push(json_call(name, body));
                } else {
                    calls.extend(scan_plain(body).1);
                }
            }
            _ => {}
        }
    }
    (reasoning, calls)
}

fn json_call(name: &str, body: &str) -> RawCall {
    let body = body.trim();
    let value: serde_json::Value = if body.is_empty() {
        serde_json::Value::Object(Default::default())
    } else {
        match serde_json::from_str(body) {
            Ok(v) => v,
            Err(e) => return RawCall::Malformed(format!("arguments are not valid JSON ({e})")),
        }
    };
    let Some(obj) = value.as_object() else {
        return RawCall::Malformed("arguments must be a JSON object".into());
    };
    let mut args = Vec::with_capacity(obj.len());
    for (k, v) in obj {
        let v = match v {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) if n.is_u64() => n.to_string(),
            _ => return RawCall::Malformed(format!("argument `{k}` must be a string")),
        };
        args.push((k.clone(), v));
    }
    RawCall::Parsed { name: name.to_string(), args }
}

/// Returns `None` when the line is not a call line, i.e. does not begin with
/// `identifier(`. A call line yields one entry per call found on it.
fn scan_line(line: &str) -> Option<Vec<RawCall>> {
    let line = line.trim().trim_matches('`').trim();
    let ident_len = identifier_len(line);
    if ident_len == 0 || !line[ident_len..].starts_with('(') {
        return None;
    }
    let mut calls = Vec::new();
    let mut rest = line;
    loop {
        match parse_call(rest) {
            Ok((call, remainder)) => {
                calls.push(call);
                let remainder = remainder.trim_start().trim_start_matches(';').trim_start();
                if remainder.is_empty() {
                    break;
                }
                let n = identifier_len(remainder);
                if n == 0 || !remainder[n..].starts_with('(') {
                    // Trailing junk: report the line as one malformed call.
                    return Some(vec![RawCall::Malformed(format!(
                        "unexpected text after call: `{remainder}`"
                    ))]);
                }
                rest = remainder;
            }
            Err(detail) => {
                calls.push(RawCall::Malformed(detail));
                break;
            }
        }
    }
    Some(calls)
}

fn identifier_len(s: &str) -> usize {
    let mut len = 0;
    for (i, c) in s.char_indices() {
        let ok = if i == 0 {
            c.is_ascii_alphabetic() || c == '_'
        } else {
            c.is_ascii_alphanumeric() || c == '_'
        };
        if !ok {
            break;
        }
        len = i + c.len_utf8();
    }
    len
}

/// Parses `name(key="value", ...)` at the start of `s`.
fn parse_call(s: &str) -> Result<(RawCall, &str), String> {
    let n = identifier_len(s);
    let name = s[..n].to_string();
    let mut chars = s[n + 1..].char_indices().peekable();
    let base = n + 1;
    let mut args = Vec::new();
    let skip_ws = |chars: &mut std::iter::Peekable<std::str::CharIndices<'_>>| {
        while matches!(chars.peek(), Some((_, c)) if c.is_whitespace()) {
            chars.next();
        }
    };
    skip_ws(&mut chars);
    if let Some(&(i, ')')) = chars.peek() {
        return Ok((RawCall::Parsed { name, args }, &s[base + i + 1..]));
    }
    loop {
        skip_ws(&mut chars);
        let key_start = match chars.peek() {
            Some(&(i, _)) => base + i,
            None => return Err(format!("unterminated call to `{name}`")),
        };
        let key_len = identifier_len(&s[key_start..]);
        if key_len == 0 {
            return Err(format!("expected an argument name in call to `{name}`"));
        }
        let key = s[key_start..key_start + key_len].to_string();
        while matches!(chars.peek(), Some(&(i, _)) if base + i < key_start + key_len) {
            chars.next();
        }
        skip_ws(&mut chars);
        if !matches!(chars.next(), Some((_, '='))) {
            return Err(format!("expected `=` after `{key}`"));
        }
        skip_ws(&mut chars);
        if !matches!(chars.next(), Some((_, '"'))) {
            return Err(format!("value of `{key}` must be a double-quoted string"));
        }
        let mut value = String::new();
        loop {
            match chars.next() {
                Some((_, '"')) => break,
                Some((_, '\\')) => match chars.next() {
                    Some((_, '"')) => value.push('"'),
                    Some((_, '\\')) => value.push('\\'),
                    Some((_, 'n')) => value.push('\n'),
                    Some((_, 't')) => value.push('\t'),
                    Some((_, 'r')) => value.push('\r'),
                    _ => return Err(format!("bad escape in value of `{key}`")),
                },
                Some((_, c)) => value.push(c),
                None => return Err(format!("unterminated string for `{key}`")),
            }
        }
        args.push((key, value));
        skip_ws(&mut chars);
        match chars.next() {
            Some((_, ',')) => continue,
            Some((i, ')')) => return Ok((RawCall::Parsed { name, args }, &s[base + i + 1..])),
            _ => return Err(format!("expected `,` or `)` in call to `{name}`")),
        }
    }
}
