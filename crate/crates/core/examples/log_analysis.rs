//! Post-hoc analysis over episode logs: uncertainty profile, override
//! counts, entropy-binned net advantage and consensus histograms.

use std::sync::Arc;

use catts::analysis::{
    consensus_histograms, entropy_binned_net_advantage, override_analysis, summary_report,
    uncertainty_profile, EntropyScale, DEFAULT_NET_ADVANTAGE_EDGES, DEFAULT_OVERRIDE_THRESHOLD,
};
use catts::env::load_scenario_file;
use catts::llm::{LlmClient, ScriptedBackend};
use catts::orchestrator::{Agent, AgentConfig, EpisodeRecord};
use catts::prompts::PromptSet;
use catts::select::{GateConfig, GateMode, Strategy};

fn run_all(strategy: &Strategy) -> Vec<EpisodeRecord> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let mut out = Vec::new();
    for name in ["meat_substitutes", "contentious_checkout", "oat_milk_search", "confident_minority"] {
        let spec = load_scenario_file(format!("{dir}/{name}.toml").as_ref()).unwrap();
        for seed in 0..4 {
            let client = LlmClient::new(Arc::new(ScriptedBackend::new(spec.script.clone())), "scripted");
            let config = AgentConfig { strategy: strategy.clone(), seed, ..Default::default() };
            out.push(Agent::new(config, client, PromptSet::default()).run_episode(&spec).unwrap());
        }
    }
    out
}

fn main() {
    let gated = run_all(&Strategy::Catts { gate: GateConfig::new(GateMode::Margin, 0.2), k: 1 });
    let always = run_all(&Strategy::Arbiter { k: 1 });

    println!("-- gated\n{}", summary_report(&gated));
    println!("-- always arbitrate\n{}", summary_report(&always));

    let profile = uncertainty_profile(&always).unwrap();
    print!("{}", profile.to_csv());

    let overrides = override_analysis(&always, DEFAULT_OVERRIDE_THRESHOLD);
    println!("\nhigh-consensus overrides (margin > {}):", overrides.threshold);
    print!("{}", overrides.to_csv());

    let adv = entropy_binned_net_advantage(&gated, &always, &DEFAULT_NET_ADVANTAGE_EDGES, EntropyScale::Normalized)
        .unwrap();
    println!("\ngated vs always, by normalized entropy:");
    print!("{}", adv.to_csv());

    let hist = consensus_histograms(&always, 0.2).unwrap();
    println!("\ntop-1 share histogram {:?}, mean {:.3}", hist.top1_probability.counts, hist.top1_probability.mean.unwrap());
}
