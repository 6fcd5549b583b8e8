//! Confidence filtering from token logprobs, compared with plain voting.

use std::sync::Arc;

use catts::env::load_scenario_file;
use catts::llm::{LlmClient, ScriptedBackend};
use catts::orchestrator::{Agent, AgentConfig};
use catts::prompts::PromptSet;
use catts::select::{DeepConfConfig, DeepConfVariant, Strategy};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/confident_minority.toml");
    let spec = load_scenario_file(path.as_ref()).unwrap();

    let mut strategies = vec![Strategy::Majority];
    for variant in [DeepConfVariant::AverageTrace, DeepConfVariant::Tail, DeepConfVariant::BottomPercent] {
        for (eta, weighted) in [(1.0, false), (1.0, true), (0.5, false), (0.5, true)] {
            strategies.push(Strategy::DeepConf(DeepConfConfig { variant, eta, weighted, ..Default::default() }));
        }
    }
    for strategy in strategies {
        let client = LlmClient::new(Arc::new(ScriptedBackend::new(spec.script.clone())), "scripted");
        let config = AgentConfig { strategy: strategy.clone(), seed: 7, ..Default::default() };
        let record = Agent::new(config, client, PromptSet::default()).run_episode(&spec).unwrap();
        let step = &record.steps[0];
        let survivors = step.decision.deepconf.as_ref().map_or(step.parsed, |t| t.survivors.len());
        println!(
            "{:<60} survivors {:>2}  chose {:<28} {}",
            strategy.label(),
            survivors,
            step.decision.chosen.to_string(),
            record.outcome()
        );
    }
}
