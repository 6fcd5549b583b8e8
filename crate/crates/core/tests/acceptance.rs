//! Acceptance suite. Every criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use proptest::prop_assert;
use proptest::strategy::Strategy as _;
use proptest::test_runner::{Config, TestRunner};
use serde_json::Value;

use catts::action::{Action, ElementId};
use catts::analysis::{
    consensus_histograms, entropy_binned_net_advantage, override_analysis, EntropyScale,
};
use catts::cluster::{cluster_candidates, normalize_payload, parse_clusters_line, DedupMode};
use catts::env::Outcome;
use catts::llm::{CallContext, CallRole, LlmClient, ScriptEntry, ScriptedBackend, ScriptedResponse};
use catts::orchestrator::{log_to_string, read_log_file, write_log, AgentConfig, EpisodeRecord};
use catts::prompts::PromptSet;
use catts::select::{
    aggregate_picks, arbiter_scaling_select, deepconf_select, filter_by_confidence,
    majority_select, select, ArbiterContext, ArbiterSetup, DeepConfConfig, GateConfig, GateMode,
    SelectionDecision, SelectionInput, Strategy,
};
use catts::stats::{entropy, margin, normalized_entropy, uncertainty};

use common::{compositions, dist, run_episode, scenario, Lcg, SCENARIOS};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const TOL: f64 = 1e-9;

// -- 1 ----------------------------------------------------------------------

fn oracle_entropy(counts: &[usize]) -> f64 {
    // ln N - (1/N) sum c ln c
    let n: usize = counts.iter().sum();
    let nf = n as f64;
    let s: f64 = counts.iter().map(|&c| c as f64 * (c as f64).ln()).sum();
    nf.ln() - s / nf
}

fn oracle_margin(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let second = sorted.get(1).copied().unwrap_or(0);
    (sorted[0] - second) as f64 / n as f64
}

fn criterion_1() -> Check {
    let mut checked = 0;
    for n in 1..=8 {
        for counts in compositions(n) {
            let d = dist(&counts);
            let (h, m) = (entropy(&d), margin(&d));
            let hn = normalized_entropy(&d, n);
            let want_hn = if n == 1 { 0.0 } else { oracle_entropy(&counts) / (n as f64).ln() };
            ensure((h - oracle_entropy(&counts)).abs() <= TOL, || format!("entropy {counts:?}: {h}"))?;
            ensure((m - oracle_margin(&counts)).abs() <= TOL, || format!("margin {counts:?}: {m}"))?;
            ensure((hn - want_hn).abs() <= TOL, || format!("normalized entropy {counts:?}: {hn}"))?;
            let s = uncertainty(&d);
            ensure((s.entropy - h).abs() <= TOL && (s.margin - m).abs() <= TOL, || {
                format!("uncertainty() disagrees on {counts:?}")
            })?;
            checked += 1;
        }
    }
    ensure(checked == 255, || format!("expected 255 compositions, saw {checked}"))?;
    for k in 1..=8 {
        let h = entropy(&dist(&vec![1; k]));
        ensure((h - (k as f64).ln()).abs() <= TOL, || format!("H(uniform {k}) = {h}"))?;
    }
    let d = dist(&[9, 1]);
    ensure((entropy(&d) - 0.325083).abs() < 5e-7, || format!("9/1 entropy {}", entropy(&d)))?;
    ensure((margin(&d) - 0.8).abs() <= TOL, || format!("9/1 margin {}", margin(&d)))
}

// -- 2 ----------------------------------------------------------------------

fn scripted_arbiter(replies: Vec<String>) -> LlmClient {
    let entry = ScriptEntry::table(
        CallRole::Arbiter,
        replies.into_iter().map(ScriptedResponse::text).collect(),
    );
    LlmClient::new(Arc::new(ScriptedBackend::new(vec![entry])), "scripted")
}

fn decide(strategy: &Strategy, counts: &[usize], reply: &str) -> SelectionDecision {
    let d = dist(counts);
    let stats = uncertainty(&d);
    let client = scripted_arbiter(vec![reply.to_string()]);
    let prompts = PromptSet::default();
    let call = CallContext::new(CallRole::Arbiter, 0, 0);
    let actx = ArbiterContext::default();
    let input = SelectionInput {
        dist: &d,
        stats: &stats,
        arbiter: &actx,
        logprobs: &[],
        setup: Some(ArbiterSetup { client: &client, prompts: &prompts, call: &call, reasks: 2 }),
    };
    select(strategy, &input).unwrap()
}

fn bytes(d: &SelectionDecision) -> String {
    serde_json::to_string(d).unwrap()
}

fn criterion_2() -> Check {
    let mut rng = Lcg(20_240_601);
    for case in 0..200 {
        let n = 1 + rng.below(10);
        let counts = rng.composition(n, 4);
        let reply = match rng.below(4) {
            0 => "Thoughts: hmm\nPick: 1\nConfidence: 0.4".to_string(),
            1 => format!("Pick: {}\nConfidence: 0.9", 1 + rng.below(counts.len())),
            2 => format!("Pick: {}", 1 + rng.below(counts.len() + 2)),
            _ => "no pick at all".to_string(),
        };
        let majority = decide(&Strategy::Majority, &counts, &reply);
        for gate in [
            GateConfig::new(GateMode::Entropy, (n as f64).ln() + 1.0),
            GateConfig::new(GateMode::Margin, 1.0),
        ] {
            let catts = decide(&Strategy::Catts { gate, k: 1 }, &counts, &reply);
            ensure(bytes(&catts.without_gate_value()) == bytes(&majority), || {
                format!("case {case}: {gate:?} on {counts:?} differs from majority")
            })?;
        }
        let always = decide(&Strategy::Catts { gate: GateConfig::new(GateMode::Always, 0.0), k: 1 }, &counts, &reply);
        let uniform = decide(&Strategy::Arbiter { k: 1 }, &counts, &reply);
        ensure(bytes(&always) == bytes(&uniform), || {
            format!("case {case}: always-gate on {counts:?} differs from uniform arbitration")
        })?;
    }
    Ok(())
}

// -- 3 ----------------------------------------------------------------------

fn criterion_3() -> Check {
    let spec = scenario("meat_substitutes");
    let always = AgentConfig {
        strategy: Strategy::Catts { gate: GateConfig::new(GateMode::Always, 0.0), k: 1 },
        seed: 7,
        ..Default::default()
    };
    let (rec, _) = run_episode(&spec, always);
    let s0 = &rec.steps[0];
    ensure(s0.clusters.iter().map(|c| c.count).collect::<Vec<_>>() == vec![9, 1], || {
        format!("step 0 split {:?}", s0.clusters.iter().map(|c| c.count).collect::<Vec<_>>())
    })?;
    ensure(s0.decision.arbiter_invoked && s0.decision.override_, || "always: no override at step 0".into())?;
    ensure(!rec.outcome().is_success(), || format!("always: outcome {}", rec.outcome()))?;
    ensure(rec.outcome() == Outcome::BudgetExhausted, || format!("always: outcome {}", rec.outcome()))?;

    let catts = AgentConfig {
        strategy: Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 },
        seed: 7,
        ..Default::default()
    };
    let (rec, backend) = run_episode(&spec, catts);
    ensure(rec.outcome() == Outcome::Success, || format!("catts: outcome {}", rec.outcome()))?;
    let s0 = &rec.steps[0];
    ensure(!s0.decision.arbiter_invoked, || "catts: arbiter invoked on the pivotal step".into())?;
    ensure(s0.decision.gate_value.is_some_and(|u| (u - 0.2).abs() < 1e-12), || {
        format!("catts: gate value {:?}", s0.decision.gate_value)
    })?;
    ensure(backend.call_ledger().subtotal(CallRole::Arbiter).total() == 0, || "catts: arbiter tokens spent".into())
}

// -- 4 ----------------------------------------------------------------------

fn exit(msg: &str) -> Action {
    Action::Exit { message: msg.into() }
}

fn search(q: &str) -> Action {
    Action::Search { element_id: ElementId::new("5").unwrap(), text: q.into() }
}

fn dedup_client(reply: &str) -> LlmClient {
    let entry = ScriptEntry::table(CallRole::Dedup, vec![ScriptedResponse::text(reply)]);
    LlmClient::new(Arc::new(ScriptedBackend::new(vec![entry])), "scripted")
}

fn partition_holds(candidates: &[(usize, Action)], clusters: &[catts::cluster::ActionCluster]) -> bool {
    let mut seen: Vec<usize> = clusters.iter().flat_map(|c| c.member_indices.clone()).collect();
    seen.sort_unstable();
    let mut want: Vec<usize> = candidates.iter().map(|(i, _)| *i).collect();
    want.sort_unstable();
    seen == want
        && clusters.iter().all(|c| {
            c.count == c.member_indices.len()
                && c.member_indices.windows(2).all(|w| w[0] < w[1])
                && candidates.iter().any(|(i, a)| *i == c.member_indices[0] && *a == c.representative)
        })
}

fn criterion_4() -> Check {
    let prompts = PromptSet::default();
    let ctx = CallContext::new(CallRole::Dedup, 0, 0);
    ensure(normalize_payload("N/A") == normalize_payload("n/a."), || "N/A vs n/a. not normalized equal".into())?;
    let out = cluster_candidates(&[(0, exit("N/A")), (1, exit("n/a."))], DedupMode::Exact, None, &ctx).unwrap();
    ensure(out.clusters.len() == 1, || "N/A / n/a. did not merge".into())?;

    let candidates = [(0, search("apple store")), (1, search("apple id login"))];
    let client = dedup_client("Clusters: [[0], [1]]");
    let out = cluster_candidates(&candidates, DedupMode::Llm, Some((&client, &prompts)), &ctx).unwrap();
    ensure(out.clusters.len() == 2 && !out.fallback, || "apple store / apple id login merged".into())?;
    let out = cluster_candidates(&candidates, DedupMode::Exact, None, &ctx).unwrap();
    ensure(out.clusters.len() == 2, || "exact mode merged apple queries".into())?;

    ensure(parse_clusters_line("Clusters: [[0,2],[1]]") == Some(vec![vec![0, 2], vec![1]]), || {
        "Clusters line not parsed".into()
    })?;
    let three = [(0, exit("N/A")), (1, exit("Not found")), (2, exit("none available"))];
    let client = dedup_client("Clusters: [[0,2],[1]]");
    let out = cluster_candidates(&three, DedupMode::Llm, Some((&client, &prompts)), &ctx).unwrap();
    let members: Vec<Vec<usize>> = out.clusters.iter().map(|c| c.member_indices.clone()).collect();
    ensure(members == vec![vec![0, 2], vec![1]], || format!("scripted dedup gave {members:?}"))?;

    let texts = ["N/A", "n/a.", "Not found", "not  found!", "apple store", "Apple Store", "apple id login", "*"];
    let action = (0usize..5, 0usize..3, 0usize..texts.len()).prop_map(move |(kind, id, t)| {
        let element_id = ElementId::new((id + 1).to_string()).unwrap();
        let text = texts[t].to_string();
        match kind {
            0 => Action::Click { element_id },
            1 => Action::TypeText { element_id, text },
            2 => Action::Search { element_id, text },
            3 => Action::Exit { message: text },
            _ => Action::Scroll { direction: if id % 2 == 0 { catts::action::Direction::Up } else { catts::action::Direction::Down } },
        }
    });
    let replies = ["Clusters: [[0, 1]]", "Clusters: [[0], [1]]", "nonsense", "Clusters: [[1, 0], [2]]"];
    let strategy = (proptest::collection::vec((action, proptest::bool::ANY), 1..12), 0usize..replies.len());
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    runner
        .run(&strategy, |(items, reply)| {
            // dropped candidates leave gaps in the index space
            let candidates: Vec<(usize, Action)> = items
                .into_iter()
                .enumerate()
                .filter(|(i, (_, keep))| *keep || *i == 0)
                .map(|(i, (a, _))| (i, a))
                .collect();
            let exact = cluster_candidates(&candidates, DedupMode::Exact, None, &ctx).unwrap();
            prop_assert!(partition_holds(&candidates, &exact.clusters));
            let client = dedup_client(replies[reply]);
            let llm = cluster_candidates(&candidates, DedupMode::Llm, Some((&client, &prompts)), &ctx).unwrap();
            prop_assert!(partition_holds(&candidates, &llm.clusters));
            prop_assert!(llm.clusters.len() <= exact.clusters.len());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

// -- 5 ----------------------------------------------------------------------

fn strategies() -> Vec<Strategy> {
    vec![
        Strategy::Majority,
        Strategy::Arbiter { k: 1 },
        Strategy::Arbiter { k: 3 },
        Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 },
        Strategy::Catts { gate: GateConfig::new(GateMode::Entropy, 0.5), k: 2 },
        Strategy::DeepConf(DeepConfConfig { eta: 0.5, weighted: true, ..Default::default() }),
    ]
}

fn criterion_5() -> Check {
    let mut episodes = 0;
    for name in SCENARIOS {
        let spec = scenario(name);
        for strategy in strategies() {
            for dedup in [DedupMode::Exact, DedupMode::Llm] {
                let config = AgentConfig { strategy: strategy.clone(), dedup, seed: 3, ..Default::default() };
                let (rec, backend) = run_episode(&spec, config);
                let label = format!("{name} {} {dedup:?}", strategy.label());
                ensure(rec.footer.ledger == backend.call_ledger(), || {
                    format!("{label}: ledger {:?} vs backend {:?}", rec.footer.ledger, backend.call_ledger())
                })?;
                let steps: u64 = rec.steps.iter().map(|s| s.ledger.total().total()).sum::<u64>()
                    + rec.footer.aborted_step_ledger.total().total();
                ensure(steps == rec.total_tokens(), || format!("{label}: step sum {steps} vs {}", rec.total_tokens()))?;
                ensure(rec.total_tokens() == backend.call_ledger().total().total(), || format!("{label}: totals"))?;
                episodes += 1;
            }
        }
    }
    ensure(episodes == SCENARIOS.len() * 12, || "not every episode ran".into())
}

// -- 6 ----------------------------------------------------------------------

fn multisets(k: usize, m: usize) -> Vec<Vec<usize>> {
    // nondecreasing sequences of length k over 0..m
    fn go(k: usize, m: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in from..m {
            cur.push(v);
            go(k, m, v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(k, m, 0, &mut Vec::new(), &mut out);
    out
}

fn plurality_oracle(picks: &[usize], counts: &[usize]) -> usize {
    let freq = |c: usize| picks.iter().filter(|&&p| p == c).count();
    let top = (0..counts.len()).map(freq).max().unwrap();
    let tied: Vec<usize> = (0..counts.len()).filter(|&c| freq(c) == top).collect();
    let best_n = tied.iter().map(|&c| counts[c]).max().unwrap();
    *tied.iter().find(|&&c| counts[c] == best_n).unwrap()
}

fn criterion_6() -> Check {
    let prompts = PromptSet::default();
    let call = CallContext::new(CallRole::Arbiter, 0, 0);
    let mut scripted_runs = 0;
    for m in 1..=4 {
        let count_vectors: Vec<Vec<usize>> = (0..3usize.pow(m as u32))
            .map(|mut code| {
                (0..m)
                    .map(|_| {
                        let c = 1 + code % 3;
                        code /= 3;
                        c
                    })
                    .collect()
            })
            .collect();
        for k in 1..=5 {
            for picks in multisets(k, m) {
                for counts in &count_vectors {
                    let got = aggregate_picks(&picks.iter().map(|&p| Some(p)).collect::<Vec<_>>(), counts);
                    let want = plurality_oracle(&picks, counts);
                    ensure(got == Some(want), || format!("picks {picks:?} counts {counts:?}: {got:?} vs {want}"))?;
                }
                if m == 1 {
                    continue;
                }
                // end to end through scripted selectors, one count vector per multiset
                let counts = &count_vectors[(picks.iter().sum::<usize>() + k) % count_vectors.len()];
                let client = scripted_arbiter(picks.iter().map(|p| format!("Pick: {}", p + 1)).collect());
                let setup = ArbiterSetup { client: &client, prompts: &prompts, call: &call, reasks: 2 };
                let dec = arbiter_scaling_select(&ArbiterContext::default(), &dist(counts), &setup, k).map_err(|e| e.to_string())?;
                let want = plurality_oracle(&picks, counts);
                ensure(dec.chosen_cluster == want, || {
                    format!("scripted picks {picks:?} counts {counts:?}: chose {} want {want}", dec.chosen_cluster)
                })?;
                scripted_runs += 1;
            }
        }
    }
    ensure(scripted_runs > 0, || "no scripted runs".into())
}

// -- 7 ----------------------------------------------------------------------

fn criterion_7() -> Check {
    let mut rng = Lcg(77);
    let plain = DeepConfConfig { eta: 1.0, weighted: false, ..Default::default() };
    for case in 0..200 {
        let n = 1 + rng.below(10);
        let counts = rng.composition(n, 5);
        let d = dist(&counts);
        let lps: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..1 + rng.below(6)).map(|_| -(rng.below(1000) as f64) / 300.0).collect())
            .collect();
        let pairs: Vec<(usize, Option<&[f64]>)> = lps.iter().enumerate().map(|(i, l)| (i, Some(l.as_slice()))).collect();
        let dc = deepconf_select(&pairs, &d, &plain).map_err(|e| e.to_string())?;
        ensure(dc.chosen_cluster == majority_select(&d).0, || format!("case {case}: {counts:?}"))?;
    }

    let ln = f64::ln;
    let low = [ln(0.1)];
    let high = [ln(0.9)];
    let d21 = dist(&[2, 1]);
    let pairs: Vec<(usize, Option<&[f64]>)> = vec![(0, Some(&low)), (1, Some(&low)), (2, Some(&high))];
    let weighted = DeepConfConfig { eta: 1.0, weighted: true, ..Default::default() };
    let dec = deepconf_select(&pairs, &d21, &weighted).map_err(|e| e.to_string())?;
    let scores = dec.deepconf.as_ref().unwrap().cluster_scores.clone();
    ensure(dec.chosen_cluster == 1, || format!("weighted example chose {}", dec.chosen_cluster))?;
    ensure((scores[0] - 0.2).abs() < 1e-12 && (scores[1] - 0.9).abs() < 1e-12, || format!("scores {scores:?}"))?;

    ensure(deepconf_select(&pairs, &d21, &plain).unwrap().chosen_cluster == majority_select(&d21).0, || {
        "eta=1 unweighted differs from majority".into()
    })?;

    let survivors = filter_by_confidence(&[(0, 0.1), (1, 0.5), (2, 0.9)], 0.34);
    ensure(survivors == vec![2, 1], || format!("eta=0.34 survivors {survivors:?}"))?;
    let mid = [ln(0.5)];
    let d3 = dist(&[1, 1, 1]);
    let pairs3: Vec<(usize, Option<&[f64]>)> = vec![(0, Some(&low)), (1, Some(&mid)), (2, Some(&high))];
    let filtered = DeepConfConfig { eta: 0.34, weighted: true, ..Default::default() };
    let dec = deepconf_select(&pairs3, &d3, &filtered).map_err(|e| e.to_string())?;
    ensure(dec.chosen_cluster == 2 && dec.deepconf.unwrap().survivors == vec![2, 1], || {
        "eta=0.34 weighted example".into()
    })?;

    let missing: Vec<(usize, Option<&[f64]>)> = vec![(0, Some(&low)), (1, None), (2, Some(&high))];
    match deepconf_select(&missing, &d21, &plain) {
        Err(e) if e.to_string() == "logprobs unavailable" => {}
        other => return Err(format!("missing logprobs gave {other:?}")),
    }
    // end to end: a scenario without logprobs ends in an error outcome
    let (rec, _) = run_episode(
        &scenario("contentious_checkout"),
        AgentConfig { strategy: Strategy::DeepConf(DeepConfConfig::default()), ..Default::default() },
    );
    ensure(rec.outcome() == Outcome::Error && rec.footer.message.contains("logprobs unavailable"), || {
        format!("episode without logprobs: {} {}", rec.outcome(), rec.footer.message)
    })
}

// -- 8 ----------------------------------------------------------------------

fn strip_timestamps(text: &str) -> String {
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            if let Some(o) = v.as_object_mut() {
                o.remove("started_at_ms");
                o.remove("finished_at_ms");
            }
            serde_json::to_string(&v).unwrap()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn cli(args: &[&str]) -> i32 {
    catts::cli::run(std::iter::once("catts").chain(args.iter().copied()))
}

fn criterion_8() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scen = common::scenario_dir().join("meat_substitutes");
    let scen = scen.to_str().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let code = cli(&[
            "run", "--scenario", scen, "--strategy", "catts", "--gate", "margin", "--tau", "0.2",
            "--n", "10", "--seed", "7", "--out", out.to_str().unwrap(),
        ]);
        ensure(code == 0, || format!("run {run} exited {code}"))?;
        let text = std::fs::read_to_string(out.join("meat-substitutes-seed7.jsonl")).map_err(|e| e.to_string())?;
        outputs.push(text);
    }
    ensure(outputs[0].contains("started_at_ms"), || "logs carry no timestamp".into())?;
    ensure(strip_timestamps(&outputs[0]) == strip_timestamps(&outputs[1]), || "logs differ beyond timestamps".into())?;

    let golden = common::scenario_dir().join("golden");
    let mut replayed = 0;
    for entry in std::fs::read_dir(&golden).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let scenario_name = name.split("__").next().unwrap();
        let scen = common::scenario_dir().join(scenario_name);
        let code = cli(&["replay", "--log", path.to_str().unwrap(), "--scenario", scen.to_str().unwrap()]);
        ensure(code == 0, || format!("replay of {name} exited {code}"))?;
        replayed += 1;
    }
    ensure(replayed >= 8, || format!("only {replayed} golden logs"))
}

// -- 9 ----------------------------------------------------------------------

fn raw_logs(dir: &Path) -> Vec<Value> {
    let mut paths: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let lines: Vec<Value> = std::fs::read_to_string(p)
                .unwrap()
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect();
            Value::Array(lines)
        })
        .collect()
}

fn raw_key(log: &Value) -> String {
    let h = &log[0];
    format!("{}#{}", h["task_id"].as_str().unwrap(), h["config"]["seed"].as_u64().unwrap())
}

fn raw_success(log: &Value) -> bool {
    log.as_array().unwrap().last().unwrap()["outcome"] == "success"
}

fn raw_steps(log: &Value) -> Vec<&Value> {
    log.as_array().unwrap().iter().filter(|l| l["type"] == "step").collect()
}

fn raw_counts(step: &Value) -> Vec<usize> {
    step["clusters"].as_array().unwrap().iter().map(|c| c["member_indices"].as_array().unwrap().len()).collect()
}

fn brute_entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    -counts.iter().map(|&c| c as f64 / n as f64).map(|p| p * p.ln()).sum::<f64>()
}

fn brute_margin(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut s = counts.to_vec();
    s.sort_unstable();
    s.reverse();
    (s[0] as f64 - s.get(1).copied().unwrap_or(0) as f64) / n as f64
}

fn brute_norm_entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n <= 1 { 0.0 } else { brute_entropy(counts) / (n as f64).ln() }
}

fn write_arm(dir: &Path, strategy: Strategy, seeds: std::ops::Range<u64>) -> Vec<EpisodeRecord> {
    std::fs::create_dir_all(dir).unwrap();
    let mut out = Vec::new();
    for name in SCENARIOS {
        let spec = scenario(name);
        for seed in seeds.clone() {
            let config = AgentConfig { strategy: strategy.clone(), seed, n: 10, ..Default::default() };
            let (rec, _) = run_episode(&spec, config);
            let f = std::fs::File::create(dir.join(format!("{name}-{seed}.jsonl"))).unwrap();
            write_log(&rec, f).unwrap();
            out.push(rec);
        }
    }
    out
}

fn criterion_9() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a_dir = tmp.path().join("a");
    let b_dir = tmp.path().join("b");
    write_arm(&a_dir, Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 }, 0..5);
    write_arm(&b_dir, Strategy::Catts { gate: GateConfig::new(GateMode::Always, 0.0), k: 1 }, 0..5);
    let load = |dir: &Path| -> Vec<EpisodeRecord> {
        let mut paths: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        paths.sort();
        paths.iter().map(|p| read_log_file(p).unwrap()).collect()
    };
    let (a, b) = (load(&a_dir), load(&b_dir));
    let (raw_a, raw_b) = (raw_logs(&a_dir), raw_logs(&b_dir));

    // override grouping
    for (logs, raw) in [(&a, &raw_a), (&b, &raw_b)] {
        for threshold in [0.7, 0.5, 0.0] {
            let report = override_analysis(logs, threshold);
            let mut groups = [(0usize, 0usize); 3];
            for log in raw {
                let n = raw_steps(log)
                    .iter()
                    .filter(|s| {
                        let d = &s["decision"];
                        let counts = raw_counts(s);
                        let majority = (0..counts.len()).rev().max_by_key(|&i| counts[i]).unwrap();
                        d["arbiter_invoked"] == true
                            && d["chosen_cluster"].as_u64().unwrap() as usize != majority
                            && brute_margin(&counts) > threshold
                    })
                    .count();
                let g = &mut groups[n.min(2)];
                g.0 += 1;
                g.1 += usize::from(raw_success(log));
            }
            for (i, g) in report.groups.iter().enumerate() {
                ensure((g.tasks, g.successes) == groups[i], || {
                    format!("override group {} at {threshold}: {:?} vs {:?}", g.label, (g.tasks, g.successes), groups[i])
                })?;
            }
        }
    }
    ensure(override_analysis(&b, 0.7).groups[0].tasks < b.len(), || "fixture has no high-consensus override".into())?;

    // entropy-binned net advantage
    let edges = [0.0, 0.1, 0.3, 0.6, 1.0];
    let report = entropy_binned_net_advantage(&a, &b, &edges, EntropyScale::Normalized).map_err(|e| e.to_string())?;
    let mean_h = |log: &Value| {
        let hs: Vec<f64> = raw_steps(log).iter().map(|s| brute_norm_entropy(&raw_counts(s))).collect();
        hs.iter().sum::<f64>() / hs.len() as f64
    };
    let raw_b_by_key: BTreeMap<String, &Value> = raw_b.iter().map(|l| (raw_key(l), l)).collect();
    let mut bins = vec![(0usize, 0i64); edges.len() - 1];
    for la in &raw_a {
        let lb = raw_b_by_key[&raw_key(la)];
        let h = (mean_h(la) + mean_h(lb)) / 2.0;
        let i = (0..edges.len() - 1).find(|&i| h < edges[i + 1]).unwrap_or(edges.len() - 2);
        bins[i].0 += 1;
        bins[i].1 += i64::from(raw_success(la) && !raw_success(lb)) - i64::from(raw_success(lb) && !raw_success(la));
    }
    for (bin, (size, net)) in report.bins.iter().zip(&bins) {
        ensure(bin.tasks == *size, || format!("bin [{}, {}) size {} vs {size}", bin.lo, bin.hi, bin.tasks))?;
        let want = (*size > 0).then(|| *net as f64 / *size as f64);
        ensure(match (bin.net_advantage, want) {
            (Some(x), Some(y)) => (x - y).abs() <= TOL,
            (None, None) => true,
            _ => false,
        }, || format!("bin [{}, {}) net {:?} vs {want:?}", bin.lo, bin.hi, bin.net_advantage))?;
    }
    ensure(report.bins.iter().any(|b| b.net_advantage.is_some_and(|x| x != 0.0)), || "no nonzero bin".into())?;

    // histograms
    let mut all = a.clone();
    all.extend(b.clone());
    let raw_all: Vec<&Value> = raw_a.iter().chain(&raw_b).collect();
    let h = consensus_histograms(&all, 0.1).map_err(|e| e.to_string())?;
    let steps: Vec<Vec<usize>> = raw_all.iter().flat_map(|l| raw_steps(l)).map(raw_counts).collect();
    let top1: Vec<f64> = steps
        .iter()
        .map(|c| *c.iter().max().unwrap() as f64 / c.iter().sum::<usize>() as f64)
        .collect();
    let ent: Vec<f64> = steps.iter().map(|c| brute_norm_entropy(c)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ensure((h.top1_probability.mean.unwrap() - mean(&top1)).abs() <= TOL, || "top-1 mean differs".into())?;
    ensure((h.normalized_entropy.mean.unwrap() - mean(&ent)).abs() <= TOL, || "entropy mean differs".into())?;
    ensure(h.top1_probability.counts.iter().sum::<usize>() == steps.len(), || "top-1 counts do not sum".into())?;
    let mut top1_bins = [0usize; 10];
    for p in &top1 {
        top1_bins[((p * 10.0 + 1e-9).floor() as usize).min(9)] += 1;
    }
    ensure(h.top1_probability.counts == top1_bins, || format!("top-1 bins {:?} vs {top1_bins:?}", h.top1_probability.counts))?;
    ensure(log_to_string(&a[0]).lines().count() == a[0].steps.len() + 2, || "log layout".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("1 uncertainty math vs brute-force oracle", criterion_1),
        ("2 gate degeneracy equivalences", criterion_2),
        ("3 meat-substitutes golden scenario", criterion_3),
        ("4 clustering fixtures and partition property", criterion_4),
        ("5 token accounting vs backend ledger", criterion_5),
        ("6 arbiter-scaling aggregation vs plurality oracle", criterion_6),
        ("7 deepconf reductions, weighting, missing logprobs", criterion_7),
        ("8 run determinism and golden replay", criterion_8),
        ("9 analysis vs raw-log recomputation", criterion_9),
    ];
    let start = std::time::Instant::now();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(()) => println!("PASS criterion {name}"),
            Err(e) => {
                println!("FAIL criterion {name}: {e}");
                failed.push(name);
            }
        }
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Criterion 10: one episode against a live chat-completions endpoint.
/// Set `CATTS_LIVE_ENDPOINT` (and `CATTS_API_KEY`, `CATTS_LIVE_MODEL` as
/// needed) and run with `--ignored`.
#[test]
#[ignore = "needs a live endpoint"]
fn live_endpoint_smoke() {
    let Ok(endpoint) = std::env::var("CATTS_LIVE_ENDPOINT") else {
        println!("SKIP criterion 10 live endpoint: CATTS_LIVE_ENDPOINT not set");
        return;
    };
    let model = std::env::var("CATTS_LIVE_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
    let tmp = tempfile::tempdir().unwrap();
    let scen = common::scenario_dir().join("meat_substitutes");
    let code = cli(&[
        "run", "--scenario", scen.to_str().unwrap(), "--strategy", "catts", "--gate", "margin",
        "--tau", "0.2", "--n", "3", "--endpoint", &endpoint, "--model", &model, "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let log = read_log_file(&tmp.path().join("meat-substitutes-seed0.jsonl")).unwrap();
    println!("{} criterion 10 live endpoint: exit {code}, outcome {}", if code == 0 { "PASS" } else { "FAIL" }, log.outcome());
    assert_eq!(code, 0);
}
