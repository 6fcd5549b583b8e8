//! Write an episode log, read it back, replay it against the scenario, then
//! show that an edited log is caught.

use std::sync::Arc;

use catts::env::load_scenario_file;
use catts::llm::{LlmClient, ScriptedBackend};
use catts::orchestrator::{log_to_string, read_log, replay, Agent, AgentConfig};
use catts::prompts::PromptSet;
use catts::select::{GateConfig, GateMode, Strategy};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/contentious_checkout.toml");
    let spec = load_scenario_file(path.as_ref()).unwrap();
    let client = LlmClient::new(Arc::new(ScriptedBackend::new(spec.script.clone())), "scripted");
    let config = AgentConfig {
        strategy: Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 },
        seed: 3,
        ..Default::default()
    };
    let record = Agent::new(config, client, PromptSet::default()).run_episode(&spec).unwrap();
    let text = log_to_string(&record);
    println!("log: {} lines, {} bytes", text.lines().count(), text.len());

    let back = read_log(text.as_bytes()).unwrap();
    assert_eq!(back.without_timestamps(), record.without_timestamps());
    println!("replay of the original: {:?}", replay(&back, &spec));

    // pretend the arbiter had picked the gift-card link instead
    let mut edited = back.clone();
    let step = &mut edited.steps[0];
    step.decision.chosen = step.clusters[0].representative.clone();
    step.decision.chosen_cluster = 0;
    match replay(&edited, &spec) {
        Ok(()) => println!("edited log replayed cleanly (unexpected)"),
        Err(d) => println!("edited log diverges: {d}"),
    }

    // and a log cut short is rejected on read
    let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
    println!("truncated log: {}", read_log(cut.as_bytes()).unwrap_err());
}
