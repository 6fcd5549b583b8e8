//! An arbiter consulted on every step can talk the agent out of a correct
//! 9-to-1 consensus. The gated variant never asks on that step.

use std::sync::Arc;

use catts::env::load_scenario_file;
use catts::llm::{CallRole, LlmClient, ScriptedBackend};
use catts::orchestrator::{Agent, AgentConfig};
use catts::prompts::PromptSet;
use catts::select::{GateConfig, GateMode, Strategy};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/meat_substitutes.toml");
    let spec = load_scenario_file(path.as_ref()).unwrap();

    for strategy in [
        Strategy::Majority,
        Strategy::Arbiter { k: 1 },
        Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 },
    ] {
        let backend = Arc::new(ScriptedBackend::new(spec.script.clone()));
        let client = LlmClient::new(backend.clone(), "scripted");
        let config = AgentConfig { strategy: strategy.clone(), seed: 7, ..Default::default() };
        let record = Agent::new(config, client, PromptSet::default()).run_episode(&spec).unwrap();

        println!("== {} -> {} after {} steps", strategy.label(), record.outcome(), record.steps.len());
        for s in &record.steps {
            let counts: Vec<usize> = s.clusters.iter().map(|c| c.count).collect();
            println!(
                "  step {} on {:<10} votes {:?} margin {:.2} chose {}{}",
                s.step,
                s.page_id,
                counts,
                s.stats.margin,
                s.decision.chosen,
                if s.decision.override_ { "  (override)" } else { "" }
            );
        }
        println!("  arbiter tokens {}", backend.call_ledger().subtotal(CallRole::Arbiter).total());
    }
}
