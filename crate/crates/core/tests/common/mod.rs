#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use catts::action::{Action, ElementId};
use catts::cluster::ActionCluster;
use catts::env::{load_scenario_file, ScenarioSpec};
use catts::llm::{LlmClient, ScriptedBackend};
use catts::orchestrator::{Agent, AgentConfig, EpisodeRecord};
use catts::prompts::PromptSet;
use catts::stats::{build_distribution, VoteDistribution};

pub const SCENARIOS: [&str; 4] =
    ["meat_substitutes", "contentious_checkout", "oat_milk_search", "confident_minority"];

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn scenario(name: &str) -> ScenarioSpec {
    load_scenario_file(&scenario_dir().join(format!("{name}.toml"))).unwrap()
}

pub fn click(id: usize) -> Action {
    Action::Click { element_id: ElementId::new(id.to_string()).unwrap() }
}

/// Distribution with one `click` cluster per count; members are consecutive
/// candidate indices.
pub fn dist(counts: &[usize]) -> VoteDistribution {
    let mut next = 0;
    let clusters = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let members: Vec<usize> = (next..next + c).collect();
            next += c;
            ActionCluster::new(click(i + 1), members)
        })
        .collect();
    build_distribution(clusters).unwrap()
}

pub fn run_episode(spec: &ScenarioSpec, config: AgentConfig) -> (EpisodeRecord, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(spec.script.clone()));
    let client = LlmClient::new(backend.clone(), config.model.clone());
    let record = Agent::new(config, client, PromptSet::default()).run_episode(spec).unwrap();
    (record, backend)
}

/// All ordered compositions of `n` into positive parts.
pub fn compositions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for mut rest in compositions(n - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Small deterministic generator for fixture construction.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        self.0 >> 33
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }

    /// Random composition of `n` into at most `max_parts` parts.
    pub fn composition(&mut self, n: usize, max_parts: usize) -> Vec<usize> {
        let parts = 1 + self.below(max_parts.min(n));
        let mut counts = vec![1; parts];
        for _ in parts..n {
            let i = self.below(parts);
            counts[i] += 1;
        }
        counts
    }
}
