//! Offline diagnostics over episode logs.
//!
//! Episodes are identified by `(task_id, seed)`. CSV outputs:
//!
//! | report | header |
//! |---|---|
//! | profile | `outcome,step,episodes,mean_entropy,mean_margin,mean_normalized_entropy` |
//! | override | `overrides,tasks,successes,success_rate` |
//! | net advantage | `bin_lo,bin_hi,tasks,a_wins,b_wins,net_advantage` |
//! | histogram | `metric,bin_lo,bin_hi,count` |
//! | frontier | `config,episodes,success_rate,mean_total_tokens` |
//!
//! Undefined values (empty bins, empty groups) are written as empty fields.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::orchestrator::EpisodeRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no episodes to analyze")]
    Empty,
    #[error("task sets differ: only in A {only_a:?}, only in B {only_b:?}")]
    MismatchedTasks { only_a: Vec<String>, only_b: Vec<String> },
    #[error("bin edges must be at least two strictly increasing values")]
    InvalidEdges,
    #[error("bin width must be in (0, 1]")]
    InvalidWidth,
}

/// `task_id#seed`, the identity of an episode across strategies.
pub fn episode_key(log: &EpisodeRecord) -> String {
    format!("{}#{}", log.header.task_id, log.header.config.seed)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub key: String,
    pub success: bool,
    pub steps: usize,
    /// `None` for episodes without recorded steps.
    pub mean_entropy: Option<f64>,
    pub mean_margin: Option<f64>,
    pub mean_normalized_entropy: Option<f64>,
}

pub fn task_summary(log: &EpisodeRecord) -> TaskSummary {
    let stats = || log.steps.iter().map(|s| s.stats);
    TaskSummary {
        key: episode_key(log),
        success: log.outcome().is_success(),
        steps: log.steps.len(),
        mean_entropy: mean(stats().map(|s| s.entropy)),
        mean_margin: mean(stats().map(|s| s.margin)),
        mean_normalized_entropy: mean(stats().map(|s| s.normalized_entropy)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPoint {
    pub step: usize,
    pub episodes: usize,
    pub mean_entropy: f64,
    pub mean_margin: f64,
    pub mean_normalized_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyProfile {
    pub success: Vec<StepPoint>,
    pub failure: Vec<StepPoint>,
    pub success_tasks: usize,
    pub failure_tasks: usize,
    pub tasks: Vec<TaskSummary>,
}

fn curve<'a>(logs: impl Iterator<Item = &'a EpisodeRecord>) -> Vec<StepPoint> {
    let mut by_step: BTreeMap<usize, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for log in logs {
        for s in &log.steps {
            by_step
                .entry(s.step)
                .or_default()
                .push((s.stats.entropy, s.stats.margin, s.stats.normalized_entropy));
        }
    }
    by_step
        .into_iter()
        .map(|(step, v)| StepPoint {
            step,
            episodes: v.len(),
            mean_entropy: mean(v.iter().map(|x| x.0)).expect("nonempty"),
            mean_margin: mean(v.iter().map(|x| x.1)).expect("nonempty"),
            mean_normalized_entropy: mean(v.iter().map(|x| x.2)).expect("nonempty"),
        })
        .collect()
}

/// Mean entropy and margin per step index, split into successful and
/// unsuccessful episodes, plus per-episode averages.
pub fn uncertainty_profile(logs: &[EpisodeRecord]) -> Result<UncertaintyProfile, AnalysisError> {
    if logs.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let success = |l: &&EpisodeRecord| l.outcome().is_success();
    Ok(UncertaintyProfile {
        success: curve(logs.iter().filter(success)),
        failure: curve(logs.iter().filter(|l| !success(l))),
        success_tasks: logs.iter().filter(success).count(),
        failure_tasks: logs.iter().filter(|l| !success(l)).count(),
        tasks: logs.iter().map(task_summary).collect(),
    })
}

impl UncertaintyProfile {
    pub fn to_csv(&self) -> String {
        let rows = [("success", &self.success), ("failure", &self.failure)]
            .into_iter()
            .flat_map(|(label, pts)| {
                pts.iter().map(move |p| {
                    vec![
                        label.to_string(),
                        p.step.to_string(),
                        p.episodes.to_string(),
                        p.mean_entropy.to_string(),
                        p.mean_margin.to_string(),
                        p.mean_normalized_entropy.to_string(),
                    ]
                })
            })
            .collect();
        csv_string(
            &["outcome", "step", "episodes", "mean_entropy", "mean_margin", "mean_normalized_entropy"],
            rows,
        )
    }
}

pub const DEFAULT_OVERRIDE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOverrides {
    pub key: String,
    pub overrides: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideGroup {
    /// `"0"`, `"1"` or `">=2"`.
    pub label: String,
    pub tasks: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideReport {
    pub threshold: f64,
    pub tasks: Vec<TaskOverrides>,
    pub groups: Vec<OverrideGroup>,
}

/// Count, per episode, the steps where an arbiter went against a vote whose
/// margin exceeded `threshold`, and group success rates by that count.
pub fn override_analysis(logs: &[EpisodeRecord], threshold: f64) -> OverrideReport {
    let tasks: Vec<TaskOverrides> = logs
        .iter()
        .map(|l| TaskOverrides {
            key: episode_key(l),
            overrides: l
                .steps
                .iter()
                .filter(|s| s.decision.arbiter_invoked && s.decision.override_ && s.stats.margin > threshold)
                .count(),
            success: l.outcome().is_success(),
        })
        .collect();
    let groups = [("0", 0..1), ("1", 1..2), (">=2", 2..usize::MAX)]
        .into_iter()
        .map(|(label, range)| {
            let members: Vec<&TaskOverrides> = tasks.iter().filter(|t| range.contains(&t.overrides)).collect();
            let successes = members.iter().filter(|t| t.success).count();
            OverrideGroup {
                label: label.into(),
                tasks: members.len(),
                successes,
                success_rate: (!members.is_empty()).then(|| successes as f64 / members.len() as f64),
            }
        })
        .collect();
    OverrideReport { threshold, tasks, groups }
}

impl OverrideReport {
    pub fn to_csv(&self) -> String {
        let rows = self
            .groups
            .iter()
            .map(|g| {
                vec![g.label.clone(), g.tasks.to_string(), g.successes.to_string(), fmt_opt(g.success_rate)]
            })
            .collect();
        csv_string(&["overrides", "tasks", "successes", "success_rate"], rows)
    }
}

pub const DEFAULT_NET_ADVANTAGE_EDGES: [f64; 4] = [0.0, 0.3, 0.6, 1.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyScale {
    /// Entropy divided by `ln(parsed candidates)`.
    #[default]
    Normalized,
    /// Entropy in nats.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageBin {
    pub lo: f64,
    pub hi: f64,
    pub tasks: usize,
    pub a_wins: usize,
    pub b_wins: usize,
    /// `(a_wins - b_wins) / tasks`; `None` for an empty bin.
    pub net_advantage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetAdvantageReport {
    pub scale: EntropyScale,
    pub bins: Vec<AdvantageBin>,
    /// Tasks whose mean entropy fell outside the edges or was undefined.
    pub excluded: usize,
}

/// Bin index for `v` over half-open `[e_i, e_{i+1})` bins, last bin closed.
pub fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    let last = edges.len().checked_sub(2)?;
    if !(v >= edges[0] && v <= edges[last + 1]) {
        return None;
    }
    Some((0..=last).find(|&i| v < edges[i + 1]).unwrap_or(last))
}

/// Per entropy bin, how much more often strategy A succeeded where B failed
/// than the reverse. Tasks are binned by the mean of both arms' average
/// per-step entropy.
pub fn entropy_binned_net_advantage(
    logs_a: &[EpisodeRecord],
    logs_b: &[EpisodeRecord],
    edges: &[f64],
    scale: EntropyScale,
) -> Result<NetAdvantageReport, AnalysisError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AnalysisError::InvalidEdges);
    }
    let index = |logs: &[EpisodeRecord]| -> BTreeMap<String, TaskSummary> {
        logs.iter().map(|l| (episode_key(l), task_summary(l))).collect()
    };
    let a = index(logs_a);
    let b = index(logs_b);
    let keys_a: BTreeSet<&String> = a.keys().collect();
    let keys_b: BTreeSet<&String> = b.keys().collect();
    if keys_a != keys_b {
        return Err(AnalysisError::MismatchedTasks {
            only_a: keys_a.difference(&keys_b).map(|k| k.to_string()).collect(),
            only_b: keys_b.difference(&keys_a).map(|k| k.to_string()).collect(),
        });
    }
    let mut bins: Vec<AdvantageBin> = edges
        .windows(2)
        .map(|w| AdvantageBin { lo: w[0], hi: w[1], tasks: 0, a_wins: 0, b_wins: 0, net_advantage: None })
        .collect();
    let mut excluded = 0;
    for (key, ta) in &a {
        let tb = &b[key];
        let h = |t: &TaskSummary| match scale {
            EntropyScale::Normalized => t.mean_normalized_entropy,
            EntropyScale::Raw => t.mean_entropy,
        };
        let Some(bin) = h(ta).zip(h(tb)).and_then(|(x, y)| bin_index(edges, (x + y) / 2.0)) else {
            excluded += 1;
            continue;
        };
        let slot = &mut bins[bin];
        slot.tasks += 1;
        slot.a_wins += usize::from(ta.success && !tb.success);
        slot.b_wins += usize::from(tb.success && !ta.success);
    }
    for bin in &mut bins {
        bin.net_advantage =
            (bin.tasks > 0).then(|| (bin.a_wins as f64 - bin.b_wins as f64) / bin.tasks as f64);
    }
    Ok(NetAdvantageReport { scale, bins, excluded })
}

impl NetAdvantageReport {
    pub fn to_csv(&self) -> String {
        let rows = self
            .bins
            .iter()
            .map(|b| {
                vec![
                    b.lo.to_string(),
                    b.hi.to_string(),
                    b.tasks.to_string(),
                    b.a_wins.to_string(),
                    b.b_wins.to_string(),
                    fmt_opt(b.net_advantage),
                ]
            })
            .collect();
        csv_string(&["bin_lo", "bin_hi", "tasks", "a_wins", "b_wins", "net_advantage"], rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub width: f64,
    pub counts: Vec<usize>,
    pub total: usize,
    pub mean: Option<f64>,
}

impl Histogram {
    fn build(values: &[f64], width: f64) -> Self {
        let nbins = ((1.0 / width) - 1e-9).ceil() as usize;
        let mut counts = vec![0; nbins];
        for &v in values {
            let i = ((v / width + 1e-9).floor().max(0.0) as usize).min(nbins - 1);
            counts[i] += 1;
        }
        Self { width, counts, total: values.len(), mean: mean(values.iter().copied()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusHistograms {
    pub top1_probability: Histogram,
    pub normalized_entropy: Histogram,
}

/// Histograms over all steps of the top-1 vote share and normalized entropy.
pub fn consensus_histograms(logs: &[EpisodeRecord], width: f64) -> Result<ConsensusHistograms, AnalysisError> {
    if !(width > 0.0 && width <= 1.0) {
        return Err(AnalysisError::InvalidWidth);
    }
    let steps = logs.iter().flat_map(|l| &l.steps);
    let top1: Vec<f64> = steps
        .clone()
        .map(|s| {
            let total: usize = s.clusters.iter().map(|c| c.count).sum();
            s.clusters[s.stats.top1].count as f64 / total as f64
        })
        .collect();
    let ent: Vec<f64> = steps.map(|s| s.stats.normalized_entropy).collect();
    Ok(ConsensusHistograms {
        top1_probability: Histogram::build(&top1, width),
        normalized_entropy: Histogram::build(&ent, width),
    })
}

impl ConsensusHistograms {
    pub fn to_csv(&self) -> String {
        let rows = [("top1_probability", &self.top1_probability), ("normalized_entropy", &self.normalized_entropy)]
            .into_iter()
            .flat_map(|(metric, h)| {
                h.counts.iter().enumerate().map(move |(i, c)| {
                    let lo = i as f64 * h.width;
                    vec![
                        metric.to_string(),
                        format!("{lo:.4}"),
                        format!("{:.4}", (lo + h.width).min(1.0)),
                        c.to_string(),
                    ]
                })
            })
            .collect();
        csv_string(&["metric", "bin_lo", "bin_hi", "count"], rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub config: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_total_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierTable {
    pub rows: Vec<FrontierRow>,
}

/// Label for grouping logs by configuration: strategy, N and dedup mode.
pub fn config_label(log: &EpisodeRecord) -> String {
    let c = &log.header.config;
    format!("{} n={} dedup={:?}", log.header.strategy_label, c.n, c.dedup).to_lowercase()
}

pub fn group_by_config(logs: Vec<EpisodeRecord>) -> Vec<(String, Vec<EpisodeRecord>)> {
    let mut groups: BTreeMap<String, Vec<EpisodeRecord>> = BTreeMap::new();
    for l in logs {
        groups.entry(config_label(&l)).or_default().push(l);
    }
    groups.into_iter().collect()
}

/// One row per nonempty group: success fraction and mean tokens per episode.
pub fn frontier(groups: &[(String, Vec<EpisodeRecord>)]) -> FrontierTable {
    let rows = groups
        .iter()
        .filter(|(label, logs)| {
            if logs.is_empty() {
                log::warn!("frontier: group {label:?} has no episodes; skipped");
            }
            !logs.is_empty()
        })
        .map(|(label, logs)| {
            let n = logs.len() as f64;
            FrontierRow {
                config: label.clone(),
                episodes: logs.len(),
                success_rate: logs.iter().filter(|l| l.outcome().is_success()).count() as f64 / n,
                mean_total_tokens: logs.iter().map(|l| l.total_tokens() as f64).sum::<f64>() / n,
            }
        })
        .collect();
    FrontierTable { rows }
}

impl FrontierTable {
    pub fn to_csv(&self) -> String {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.config.clone(),
                    r.episodes.to_string(),
                    r.success_rate.to_string(),
                    r.mean_total_tokens.to_string(),
                ]
            })
            .collect();
        csv_string(&["config", "episodes", "success_rate", "mean_total_tokens"], rows)
    }
}

/// Short plain-text overview of a set of logs.
pub fn summary_report(logs: &[EpisodeRecord]) -> String {
    let mut out = String::new();
    let successes = logs.iter().filter(|l| l.outcome().is_success()).count();
    let steps: usize = logs.iter().map(|l| l.steps.len()).sum();
    let arbiter_steps: usize =
        logs.iter().flat_map(|l| &l.steps).filter(|s| s.decision.arbiter_invoked).count();
    let tokens: u64 = logs.iter().map(|l| l.total_tokens()).sum();
    let _ = writeln!(out, "episodes: {}", logs.len());
    let _ = writeln!(out, "successes: {successes}");
    let _ = writeln!(out, "steps: {steps}");
    let _ = writeln!(out, "arbiter steps: {arbiter_steps}");
    let _ = writeln!(out, "total tokens: {tokens}");
    if !logs.is_empty() {
        let _ = writeln!(out, "mean tokens per episode: {:.1}", tokens as f64 / logs.len() as f64);
    }
    let mut by_outcome: BTreeMap<&str, usize> = BTreeMap::new();
    for l in logs {
        *by_outcome.entry(l.outcome().as_str()).or_default() += 1;
    }
    for (o, c) in by_outcome {
        let _ = writeln!(out, "  {o}: {c}");
    }
    out
}
