//! Several arbiter calls aggregated by plurality.

use std::sync::Arc;

use catts::action::{Action, ElementId};
use catts::cluster::ActionCluster;
use catts::llm::{CallContext, CallRole, LlmClient, ScriptEntry, ScriptedBackend, ScriptedResponse};
use catts::prompts::PromptSet;
use catts::select::{arbiter_scaling_select, render_candidates, ArbiterContext, ArbiterSetup};
use catts::stats::build_distribution;

fn click(id: &str) -> Action {
    Action::Click { element_id: ElementId::new(id).unwrap() }
}

fn main() {
    let dist = build_distribution(vec![
        ActionCluster::new(click("3"), vec![0, 1, 2, 3]),
        ActionCluster::new(click("4"), vec![4, 5, 6]),
        ActionCluster::new(click("5"), vec![7, 8, 9]),
    ])
    .unwrap();
    println!("{}", render_candidates(&dist));

    // selector i answers replies[i]; one reply is malformed and is re-asked
    let replies = [
        "Thoughts: shipping first.\nPick: 2\nConfidence: 0.8",
        "Pick: 3\nConfidence: 0.6",
        "I cannot decide.",
        "Thoughts: the form asks for shipping.\nPick: 2\nConfidence: 0.9",
        "Pick: 1",
    ];
    let backend = Arc::new(ScriptedBackend::new(vec![ScriptEntry::table(
        CallRole::Arbiter,
        replies.iter().map(|r| ScriptedResponse::text(*r)).collect(),
    )
    .with_retry(vec![ScriptedResponse::text("Pick: 3")])]));
    let client = LlmClient::new(backend.clone(), "scripted");
    let prompts = PromptSet::default();
    let call = CallContext::new(CallRole::Arbiter, 0, 42);
    let setup = ArbiterSetup { client: &client, prompts: &prompts, call: &call, reasks: 2 };
    let actx = ArbiterContext { intent: "Check out the cart.".into(), ..Default::default() };

    let decision = arbiter_scaling_select(&actx, &dist, &setup, replies.len()).unwrap();
    for p in &decision.selector_picks {
        println!("selector pick {:?} confidence {:?} after {} call(s)", p.pick.map(|i| i + 1), p.confidence, p.calls);
    }
    println!(
        "chosen {} (cluster {}), majority was cluster {}, override {}",
        decision.chosen,
        decision.chosen_cluster + 1,
        decision.majority_cluster + 1,
        decision.override_
    );
    println!("arbiter tokens {}", backend.call_ledger().subtotal(CallRole::Arbiter).total());
}
