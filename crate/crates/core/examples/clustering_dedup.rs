//! Exact clustering versus model-assisted merging of free-text payloads.

use std::sync::Arc;

use catts::action::{Action, ElementId};
use catts::cluster::{cluster_candidates, DedupMode};
use catts::llm::{CallContext, CallRole, LlmClient, ScriptEntry, ScriptedBackend, ScriptedResponse};
use catts::prompts::PromptSet;

fn search(q: &str) -> Action {
    Action::Search { element_id: ElementId::new("4").unwrap(), text: q.into() }
}

fn main() {
    let candidates: Vec<(usize, Action)> = ["oat milk", "Oat Milk", "OAT MILK.", "oat-milk", "oat-milk", "almond milk"]
        .iter()
        .enumerate()
        .map(|(i, q)| (i, search(q)))
        .collect();
    let ctx = CallContext::new(CallRole::Dedup, 0, 0);

    let exact = cluster_candidates(&candidates, DedupMode::Exact, None, &ctx).unwrap();
    println!("exact: {} clusters", exact.clusters.len());
    for c in &exact.clusters {
        println!("  {} x{} {:?}", c.representative, c.count, c.member_indices);
    }

    // The dedup model sees one entry per exact cluster and merges 0 and 1.
    let backend = Arc::new(ScriptedBackend::new(vec![ScriptEntry::table(
        CallRole::Dedup,
        vec![ScriptedResponse::text("Same product either way.\nClusters: [[0, 1], [2]]")],
    )]));
    let client = LlmClient::new(backend.clone(), "scripted");
    let prompts = PromptSet::default();
    let merged = cluster_candidates(&candidates, DedupMode::Llm, Some((&client, &prompts)), &ctx).unwrap();
    println!("llm:   {} clusters, {} dedup call(s)", merged.clusters.len(), merged.dedup_calls);
    for c in &merged.clusters {
        println!("  {} x{} {:?}", c.representative, c.count, c.member_indices);
    }
    println!("dedup tokens: {}", backend.call_ledger().subtotal(CallRole::Dedup).total());
}
