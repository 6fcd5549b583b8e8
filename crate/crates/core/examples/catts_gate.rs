//! The uncertainty gate on a contested checkout step.
//!
//! Ten candidates split 4/3/3. Majority voting takes the plurality, which is
//! wrong here; a gated arbiter call recovers when the margin is small.

use std::sync::Arc;

use catts::env::load_scenario_file;
use catts::llm::{LlmClient, ScriptedBackend};
use catts::orchestrator::{Agent, AgentConfig};
use catts::prompts::PromptSet;
use catts::select::{GateConfig, GateMode, Strategy};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/contentious_checkout.toml");
    let spec = load_scenario_file(path.as_ref()).unwrap();

    let strategies = [
        Strategy::Majority,
        Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 },
        Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.95), k: 1 },
        Strategy::Catts { gate: GateConfig::new(GateMode::Entropy, 0.5), k: 1 },
    ];
    println!("{:<28} {:>6} {:>9} {:>8}  outcome", "strategy", "U", "arbiter", "tokens");
    for strategy in strategies {
        let backend = Arc::new(ScriptedBackend::new(spec.script.clone()));
        let client = LlmClient::new(backend, "scripted");
        let config = AgentConfig { strategy: strategy.clone(), seed: 7, ..Default::default() };
        let record = Agent::new(config, client, PromptSet::default()).run_episode(&spec).unwrap();
        let first = &record.steps[0];
        println!(
            "{:<28} {:>6} {:>9} {:>8}  {}",
            strategy.label(),
            first.decision.gate_value.map_or("-".into(), |u| format!("{u:.3}")),
            first.decision.arbiter_invoked,
            record.total_tokens(),
            record.outcome(),
        );
    }
}
