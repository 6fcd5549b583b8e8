//! Success rate against token cost across gate thresholds.

use std::sync::Arc;

use catts::analysis::frontier;
use catts::env::load_scenario_file;
use catts::llm::{LlmClient, ScriptedBackend};
use catts::orchestrator::{Agent, AgentConfig};
use catts::prompts::PromptSet;
use catts::select::{GateConfig, GateMode, Strategy};

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let specs: Vec<_> = ["meat_substitutes", "contentious_checkout", "oat_milk_search", "confident_minority"]
        .iter()
        .map(|n| load_scenario_file(format!("{dir}/{n}.toml").as_ref()).unwrap())
        .collect();

    let mut strategies = vec![Strategy::Majority, Strategy::Arbiter { k: 1 }];
    for tau in [0.1, 0.2, 0.4, 0.6, 0.8] {
        strategies.push(Strategy::Catts { gate: GateConfig::new(GateMode::Margin, tau), k: 1 });
    }

    let groups: Vec<_> = strategies
        .iter()
        .map(|strategy| {
            let records = specs
                .iter()
                .flat_map(|spec| {
                    (0..3).map(move |seed| {
                        let client = LlmClient::new(Arc::new(ScriptedBackend::new(spec.script.clone())), "scripted");
                        let config = AgentConfig { strategy: strategy.clone(), seed, ..Default::default() };
                        Agent::new(config, client, PromptSet::default()).run_episode(spec).unwrap()
                    })
                })
                .collect();
            (strategy.label(), records)
        })
        .collect();

    print!("{}", frontier(&groups).to_csv());
}
