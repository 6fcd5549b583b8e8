mod common;

use catts::analysis::{
    bin_index, consensus_histograms, entropy_binned_net_advantage, frontier, group_by_config,
    override_analysis, summary_report, uncertainty_profile, AnalysisError, EntropyScale,
};
use catts::env::Outcome;
use catts::orchestrator::{AgentConfig, EpisodeRecord, StepRecord};
use catts::stats::uncertainty;

use common::{dist, run_episode, scenario};

fn template() -> EpisodeRecord {
    let (rec, _) = run_episode(&scenario("contentious_checkout"), AgentConfig::default());
    rec
}

/// Step whose clusters and stats come from `counts`.
fn step(base: &StepRecord, index: usize, counts: &[usize], overridden: bool) -> StepRecord {
    let d = dist(counts);
    let mut s = base.clone();
    s.step = index;
    s.clusters = d.clusters().to_vec();
    s.stats = uncertainty(&d);
    s.decision.arbiter_invoked = overridden;
    s.decision.override_ = overridden;
    s
}

fn episode(task: &str, seed: u64, success: bool, tokens: u64, steps: &[(&[usize], bool)]) -> EpisodeRecord {
    let mut rec = template();
    let base = rec.steps[0].clone();
    rec.header.task_id = task.into();
    rec.header.config.seed = seed;
    rec.steps = steps.iter().enumerate().map(|(i, (c, o))| step(&base, i, c, *o)).collect();
    rec.footer.outcome = if success { Outcome::Success } else { Outcome::Failure };
    rec.footer.total_tokens = tokens;
    rec
}

const CONSENSUS: &[usize] = &[10];
const SPLIT: &[usize] = &[5, 5];

#[test]
fn frontier_point() {
    let logs = vec![
        episode("a", 0, true, 150, &[(CONSENSUS, false)]),
        episode("b", 0, false, 250, &[(CONSENSUS, false)]),
    ];
    let groups = group_by_config(logs);
    assert_eq!(groups.len(), 1);
    let table = frontier(&groups);
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].success_rate, 0.5);
    assert_eq!(table.rows[0].mean_total_tokens, 200.0);
    assert!(table.to_csv().lines().nth(1).unwrap().ends_with(",2,0.5,200"));
}

#[test]
fn frontier_skips_empty_groups() {
    let table = frontier(&[("empty".into(), vec![])]);
    assert!(table.rows.is_empty());
}

#[test]
fn net_advantage_single_bin() {
    // five tasks at zero entropy: A wins two, B wins one, two ties
    let outcomes = [(true, false), (true, false), (false, true), (true, true), (false, false)];
    let a: Vec<_> = outcomes.iter().enumerate().map(|(i, o)| episode(&format!("t{i}"), 1, o.0, 0, &[(CONSENSUS, false)])).collect();
    let b: Vec<_> = outcomes.iter().enumerate().map(|(i, o)| episode(&format!("t{i}"), 1, o.1, 0, &[(CONSENSUS, false)])).collect();
    let r = entropy_binned_net_advantage(&a, &b, &[0.0, 0.3, 0.6, 1.0], EntropyScale::Normalized).unwrap();
    assert_eq!(r.bins[0].tasks, 5);
    assert!((r.bins[0].net_advantage.unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(r.bins[1].net_advantage, None);
    assert_eq!(r.bins[2].net_advantage, None);
    assert_eq!(r.excluded, 0);
}

#[test]
fn net_advantage_uses_both_arms() {
    // A is at 0, B at ln2/ln10 ~ 0.301; the mean ~0.15 lands in the first bin
    let a = vec![episode("t", 0, true, 0, &[(CONSENSUS, false)])];
    let b = vec![episode("t", 0, false, 0, &[(SPLIT, false)])];
    let r = entropy_binned_net_advantage(&a, &b, &[0.0, 0.3, 1.0], EntropyScale::Normalized).unwrap();
    assert_eq!(r.bins[0].tasks, 1);
    assert_eq!(r.bins[0].net_advantage, Some(1.0));
    let raw = entropy_binned_net_advantage(&a, &b, &[0.0, 0.3, 1.0], EntropyScale::Raw).unwrap();
    assert_eq!(raw.bins[1].tasks, 1);
}

#[test]
fn net_advantage_errors() {
    let a = vec![episode("t", 0, true, 0, &[(CONSENSUS, false)])];
    let b = vec![episode("u", 0, true, 0, &[(CONSENSUS, false)])];
    match entropy_binned_net_advantage(&a, &b, &[0.0, 1.0], EntropyScale::Normalized) {
        Err(AnalysisError::MismatchedTasks { only_a, only_b }) => {
            assert_eq!(only_a, vec!["t#0"]);
            assert_eq!(only_b, vec!["u#0"]);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(
        entropy_binned_net_advantage(&a, &a, &[0.5, 0.5], EntropyScale::Normalized),
        Err(AnalysisError::InvalidEdges)
    );
}

#[test]
fn bin_edges() {
    let edges = [0.0, 0.3, 0.6, 1.0];
    assert_eq!(bin_index(&edges, 0.0), Some(0));
    assert_eq!(bin_index(&edges, 0.3), Some(1));
    assert_eq!(bin_index(&edges, 1.0), Some(2));
    assert_eq!(bin_index(&edges, 1.0001), None);
    assert_eq!(bin_index(&edges, -0.1), None);
    assert_eq!(bin_index(&edges, f64::NAN), None);
}

#[test]
fn override_threshold_is_strict() {
    // margins: [9,1] -> 0.8, [17,3] -> 0.7, [10] -> 1.0
    let logs = vec![
        episode("none", 0, true, 0, &[(&[9, 1], false), (CONSENSUS, false)]),
        episode("one", 0, false, 0, &[(&[9, 1], true), (&[17, 3], true)]),
        episode("two", 0, false, 0, &[(&[9, 1], true), (CONSENSUS, true)]),
        episode("low", 0, true, 0, &[(SPLIT, true)]),
    ];
    let r = override_analysis(&logs, 0.7);
    let counts: Vec<usize> = r.tasks.iter().map(|t| t.overrides).collect();
    assert_eq!(counts, vec![0, 1, 2, 0]);
    let groups: Vec<(usize, Option<f64>)> = r.groups.iter().map(|g| (g.tasks, g.success_rate)).collect();
    assert_eq!(groups, vec![(2, Some(1.0)), (1, Some(0.0)), (1, Some(0.0))]);
    let empty = override_analysis(&logs[..1], 0.7);
    assert_eq!(empty.groups[2].success_rate, None);
}

#[test]
fn histogram_bins() {
    // normalized entropy with N=10: [10] -> 0, [5,5] -> 0.30103, 10 singletons -> 1
    let logs = vec![episode("h", 0, true, 0, &[(CONSENSUS, false), (SPLIT, false), (&[1; 10], false)])];
    let h = consensus_histograms(&logs, 0.1).unwrap();
    assert_eq!(h.normalized_entropy.counts, vec![1, 0, 0, 1, 0, 0, 0, 0, 0, 1]);
    assert_eq!(h.top1_probability.counts, vec![0, 1, 0, 0, 0, 1, 0, 0, 0, 1]);
    assert!((h.top1_probability.mean.unwrap() - 1.6 / 3.0).abs() < 1e-12);
    assert_eq!(h.top1_probability.total, 3);

    let coarse = consensus_histograms(&logs, 0.3).unwrap();
    assert_eq!(coarse.top1_probability.counts.len(), 4);
    assert_eq!(consensus_histograms(&logs, 0.0), Err(AnalysisError::InvalidWidth));
    assert_eq!(consensus_histograms(&logs, 1.5), Err(AnalysisError::InvalidWidth));
    assert!(consensus_histograms(&[], 0.1).unwrap().top1_probability.mean.is_none());
}

#[test]
fn profile_splits_by_outcome() {
    let logs = vec![
        episode("s", 0, true, 0, &[(CONSENSUS, false), (CONSENSUS, false)]),
        episode("f", 0, false, 0, &[(SPLIT, false)]),
        episode("g", 0, false, 0, &[(CONSENSUS, false)]),
    ];
    let p = uncertainty_profile(&logs).unwrap();
    assert_eq!((p.success_tasks, p.failure_tasks), (1, 2));
    assert_eq!(p.success.len(), 2);
    assert_eq!(p.failure.len(), 1);
    assert_eq!(p.failure[0].episodes, 2);
    assert!((p.failure[0].mean_entropy - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
    assert!((p.failure[0].mean_margin - 0.5).abs() < 1e-12);
    assert!(p.to_csv().starts_with("outcome,step,episodes"));
    assert_eq!(uncertainty_profile(&[]), Err(AnalysisError::Empty));
}

#[test]
fn summary_mentions_counts() {
    let logs = vec![episode("s", 0, true, 10, &[(CONSENSUS, false)])];
    let text = summary_report(&logs);
    assert!(text.contains('1'), "{text}");
}
