//! Grouping of equivalent candidate actions before voting.
//!
//! Exact clustering keys every action on `(tool, element_id or direction,
//! normalized text payload)`. The optional model-backed pass then asks a
//! deduplicator to merge paraphrases, but only among free-text actions
//! (`type_text`, `search`, `exit`) that share a tool and an element target.
//!
//! Dedup replies must contain a line of the form
//!
//! ```text
//! Clusters: [[0, 2], [1]]
//! ```
//!
//! i.e. `Clusters:` followed by `[[int(,int)*](,[int(,int)*])*]`, with ASCII
//! spaces allowed between tokens. When several such lines exist the last one
//! is used. The groups must partition the request indices exactly; anything
//! else falls back to the normalized-text grouping.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionKind, Direction, ElementId};
use crate::llm::{CallContext, CallRole, GatewayError, LlmClient, Message, Role, TokenUsage};
use crate::prompts::{render, PromptSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCluster {
    pub representative: Action,
    pub member_indices: Vec<usize>,
    pub count: usize,
}

impl ActionCluster {
    /// Members are sorted; `representative` should be the action of the lowest member.
    pub fn new(representative: Action, mut member_indices: Vec<usize>) -> Self {
        member_indices.sort_unstable();
        member_indices.dedup();
        let count = member_indices.len();
        Self { representative, member_indices, count }
    }

    pub fn lowest_index(&self) -> usize {
        self.member_indices[0]
    }
}

/// Lowercase, collapse whitespace, strip leading and trailing punctuation.
pub fn normalize_payload(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct ClusterKey {
    kind: ActionKind,
    element: Option<ElementId>,
    direction: Option<Direction>,
    payload: Option<String>,
}

fn cluster_key(action: &Action) -> ClusterKey {
    ClusterKey {
        kind: action.kind(),
        element: action.element_id().cloned(),
        direction: match action {
            Action::Scroll { direction } => Some(*direction),
            _ => None,
        },
        payload: action.payload().map(normalize_payload),
    }
}

/// Group candidates by exact key. Clusters come out ordered by lowest member index.
pub fn exact_cluster(candidates: &[(usize, Action)]) -> Vec<ActionCluster> {
    let mut sorted: Vec<&(usize, Action)> = candidates.iter().collect();
    sorted.sort_by_key(|(i, _)| *i);
    let mut keys: Vec<ClusterKey> = Vec::new();
    let mut groups: Vec<(Action, Vec<usize>)> = Vec::new();
    for (index, action) in sorted {
        let key = cluster_key(action);
        match keys.iter().position(|k| *k == key) {
            Some(pos) => groups[pos].1.push(*index),
            None => {
                keys.push(key);
                groups.push((action.clone(), vec![*index]));
            }
        }
    }
    groups.into_iter().map(|(rep, members)| ActionCluster::new(rep, members)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupRequest {
    pub kind: ActionKind,
    pub target: Option<ElementId>,
    /// `(index, payload)` pairs; indices are what the model refers to.
    pub payloads: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupResponse {
    /// Index groups; the first index of each group is its representative.
    pub groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub response: DedupResponse,
    pub usage: TokenUsage,
    /// True when the reply was unusable and normalized-text grouping was used.
    pub fallback: bool,
}

fn type_tag(kind: ActionKind) -> String {
    match kind {
        ActionKind::TypeText => "TYPE".to_string(),
        ActionKind::Search => "SEARCH".to_string(),
        ActionKind::Exit => "STOP".to_string(),
        other => other.tool_name().to_uppercase(),
    }
}

/// Parse the `Clusters: [[...], ...]` line of a dedup reply.
pub fn parse_clusters_line(reply: &str) -> Option<Vec<Vec<usize>>> {
    let line = reply.lines().rev().find_map(|l| {
        let l = l.trim();
        l.get(..9)
            .filter(|head| head.eq_ignore_ascii_case("clusters:"))
            .map(|_| l[9..].trim())
    })?;
    let mut p = ListParser { bytes: line.as_bytes(), pos: 0 };
    let groups = p.outer()?;
    p.skip_spaces();
    (p.pos == p.bytes.len()).then_some(groups)
}

struct ListParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ListParser<'_> {
    fn skip_spaces(&mut self) {
        while self.bytes.get(self.pos) == Some(&b' ') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        self.skip_spaces();
        if self.bytes.get(self.pos) == Some(&b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn int(&mut self) -> Option<usize> {
        self.skip_spaces();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }

    fn group(&mut self) -> Option<Vec<usize>> {
        if !self.eat(b'[') {
            return None;
        }
        let mut items = vec![self.int()?];
        while self.eat(b',') {
            items.push(self.int()?);
        }
        self.eat(b']').then_some(items)
    }

    fn outer(&mut self) -> Option<Vec<Vec<usize>>> {
        if !self.eat(b'[') {
            return None;
        }
        let mut groups = vec![self.group()?];
        while self.eat(b',') {
            groups.push(self.group()?);
        }
        self.eat(b']').then_some(groups)
    }
}

/// True iff `groups` are nonempty and cover `indices` exactly once each.
pub fn is_partition(groups: &[Vec<usize>], indices: &[usize]) -> bool {
    let expected: BTreeSet<usize> = indices.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for g in groups {
        if g.is_empty() {
            return false;
        }
        for i in g {
            if !expected.contains(i) || !seen.insert(*i) {
                return false;
            }
        }
    }
    seen.len() == expected.len()
}

fn normalized_groups(request: &DedupRequest) -> Vec<Vec<usize>> {
    let mut keys: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, text) in &request.payloads {
        let key = normalize_payload(text);
        match keys.iter().position(|k| *k == key) {
            Some(pos) => groups[pos].push(*i),
            None => {
                keys.push(key);
                groups.push(vec![*i]);
            }
        }
    }
    groups
}

pub fn dedup_messages(request: &DedupRequest, prompts: &PromptSet) -> Vec<Message> {
    let target = request.target.as_ref().map_or("none".to_string(), |t| t.to_string());
    let tag = type_tag(request.kind);
    let items = request
        .payloads
        .iter()
        .map(|(i, text)| format!("{i}: {text}"))
        .collect::<Vec<_>>()
        .join("\n");
    vec![
        Message::new(
            Role::System,
            render(&prompts.dedup_system, &[("action_type", &tag), ("target", &target)]),
        ),
        Message::new(Role::User, render(&prompts.dedup_user, &[("items", &items)])),
    ]
}

/// One deduplicator call for a group of same-type, same-target actions.
pub fn llm_dedup(
    request: &DedupRequest,
    client: &LlmClient,
    prompts: &PromptSet,
    ctx: &CallContext,
) -> Result<DedupOutcome, GatewayError> {
    let done = client.complete(dedup_messages(request, prompts), false, ctx)?;
    let indices: Vec<usize> = request.payloads.iter().map(|(i, _)| *i).collect();
    let parsed = parse_clusters_line(&done.response.text).filter(|g| is_partition(g, &indices));
    let (groups, fallback) = match parsed {
        Some(groups) => (groups, false),
        None => {
            log::warn!(
                "dedup reply unusable at step {}; using normalized grouping",
                ctx.step
            );
            (normalized_groups(request), true)
        }
    };
    Ok(DedupOutcome {
        response: DedupResponse { groups },
        usage: done.response.usage,
        fallback,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMode {
    #[default]
    Exact,
    Llm,
}

impl std::str::FromStr for DedupMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(DedupMode::Exact),
            "llm" => Ok(DedupMode::Llm),
            _ => Err(format!("unknown dedup mode {s:?} (expected exact, llm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub clusters: Vec<ActionCluster>,
    pub dedup_usage: TokenUsage,
    pub dedup_calls: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("llm dedup mode requires a backend")]
    MissingBackend,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn dedup_eligible(kind: ActionKind) -> bool {
    matches!(kind, ActionKind::TypeText | ActionKind::Search | ActionKind::Exit)
}

/// Cluster parsed candidates. In `Llm` mode, exact clusters are merged further
/// by one dedup call per `(tool, target)` group that has more than one distinct
/// payload. `ctx` supplies the step and seed; its slot is set per group.
pub fn cluster_candidates(
    candidates: &[(usize, Action)],
    mode: DedupMode,
    dedup: Option<(&LlmClient, &PromptSet)>,
    ctx: &CallContext,
) -> Result<ClusterOutcome, ClusterError> {
    let exact = exact_cluster(candidates);
    let mut outcome = ClusterOutcome {
        clusters: exact,
        dedup_usage: TokenUsage::default(),
        dedup_calls: 0,
        fallback: false,
    };
    if mode == DedupMode::Exact {
        return Ok(outcome);
    }
    let (client, prompts) = dedup.ok_or(ClusterError::MissingBackend)?;

    // (kind, target) -> positions into the exact cluster list
    let mut groups: Vec<((ActionKind, Option<ElementId>), Vec<usize>)> = Vec::new();
    for (pos, c) in outcome.clusters.iter().enumerate() {
        let kind = c.representative.kind();
        if !dedup_eligible(kind) {
            continue;
        }
        let key = (kind, c.representative.element_id().cloned());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(pos),
            None => groups.push((key, vec![pos])),
        }
    }

    let action_of = |index: usize| -> Action {
        candidates
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, a)| a.clone())
            .expect("cluster member refers to a known candidate")
    };

    let mut merged: Vec<Option<ActionCluster>> =
        outcome.clusters.iter().cloned().map(Some).collect();
    let mut additions = Vec::new();
    let mut ordinal = 0;
    for ((kind, target), positions) in groups {
        if positions.len() < 2 {
            continue;
        }
        let request = DedupRequest {
            kind,
            target,
            payloads: positions
                .iter()
                .enumerate()
                .map(|(local, &pos)| {
                    let rep = &outcome.clusters[pos].representative;
                    (local, rep.payload().unwrap_or_default().to_string())
                })
                .collect(),
        };
        let mut group_ctx = ctx.clone().slot(ordinal, 1);
        group_ctx.role = CallRole::Dedup;
        ordinal += 1;
        let result = llm_dedup(&request, client, prompts, &group_ctx)?;
        outcome.dedup_calls += 1;
        outcome.dedup_usage += result.usage;
        outcome.fallback |= result.fallback;
        for group in result.response.groups {
            let members: Vec<usize> = group
                .iter()
                .flat_map(|&local| {
                    let pos = positions[local];
                    merged[pos].take().map(|c| c.member_indices).unwrap_or_default()
                })
                .collect();
            let lowest = *members.iter().min().expect("dedup groups are nonempty");
            additions.push(ActionCluster::new(action_of(lowest), members));
        }
    }
    let mut clusters: Vec<ActionCluster> = merged.into_iter().flatten().collect();
    clusters.extend(additions);
    clusters.sort_by_key(ActionCluster::lowest_index);
    outcome.clusters = clusters;
    Ok(outcome)
}
