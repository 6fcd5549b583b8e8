//! One episode against an OpenAI-compatible chat-completions endpoint.
//!
//! ```text
//! CATTS_API_KEY=... cargo run --example live_endpoint -- https://host/v1 model-name
//! ```
//!
//! The scenario's scripted responses are ignored; only its pages are used.

use std::sync::Arc;

use catts::env::load_scenario_file;
use catts::llm::{HttpBackend, HttpConfig, LlmClient};
use catts::orchestrator::{Agent, AgentConfig};
use catts::prompts::PromptSet;
use catts::select::{GateConfig, GateMode, Strategy};

fn main() {
    let mut args = std::env::args().skip(1);
    let (Some(endpoint), Some(model)) = (args.next(), args.next()) else {
        eprintln!("usage: live_endpoint <endpoint> <model> [scenario.toml]");
        std::process::exit(2);
    };
    let scenario = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/meat_substitutes.toml").into());
    let spec = load_scenario_file(scenario.as_ref()).unwrap();

    let backend = HttpBackend::new(HttpConfig::new(endpoint)).unwrap();
    let client = LlmClient::new(Arc::new(backend), model.clone());
    let config = AgentConfig {
        strategy: Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 },
        n: 5,
        model,
        ..Default::default()
    };
    let record = Agent::new(config, client, PromptSet::default()).run_episode(&spec).unwrap();
    for s in &record.steps {
        println!(
            "step {}: {} clusters, margin {:.2}, arbiter {}, chose {}",
            s.step,
            s.clusters.len(),
            s.stats.margin,
            s.decision.arbiter_invoked,
            s.decision.chosen
        );
    }
    println!("{}: {} ({} tokens)", record.outcome(), record.footer.message, record.total_tokens());
}
