//! Vote statistics for a set of cluster counts.
//!
//! ```text
//! cargo run --example uncertainty_stats -- 4 3 3
//! ```

use catts::action::{Action, ElementId};
use catts::cluster::ActionCluster;
use catts::stats::{build_distribution, uncertainty};

fn main() {
    let mut counts: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if counts.is_empty() {
        counts = vec![9, 1];
    }
    let mut next = 0;
    let clusters = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let members = (next..next + c).collect();
            next += c;
            let id = ElementId::new((i + 1).to_string()).unwrap();
            ActionCluster::new(Action::Click { element_id: id }, members)
        })
        .collect();
    let dist = build_distribution(clusters).expect("counts must be positive");
    let s = uncertainty(&dist);

    println!("counts              {counts:?}");
    println!("entropy (nats)      {:.6}", s.entropy);
    println!("normalized entropy  {:.6}", s.normalized_entropy);
    println!("margin p1 - p2      {:.6}", s.margin);
    println!("majority cluster    {}", s.top1);
    for tau in [0.1, 0.2, 0.5] {
        println!(
            "tau={tau}: entropy gate {}, margin gate {}",
            if s.entropy > tau { "arbitrates" } else { "keeps majority" },
            if 1.0 - s.margin > tau { "arbitrates" } else { "keeps majority" },
        );
    }
}
