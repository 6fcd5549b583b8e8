//! Parsing and validating raw model turns.

use std::collections::BTreeSet;

use catts::action::{check_element_exists, check_repeat_loop, parse_candidate, Action};

fn main() {
    let page_ids: BTreeSet<String> = ["3", "7", "12"].iter().map(|s| s.to_string()).collect();
    let history: Vec<Action> = vec![
        "scroll(direction=\"down\")".parse().unwrap(),
        "scroll(direction=\"down\")".parse().unwrap(),
    ];

    let turns = [
        "The search box is element 7.\nsearch(element_id=\"7\", text=\"meat substitutes\")",
        "click(element_id=\"3\")",
        "Two things at once.\nclick(element_id=\"3\")\nclick(element_id=\"7\")",
        "Maybe element 99.\nclick(element_id=\"99\")",
        "Keep going.\nscroll(direction=\"down\")",
        "Nothing to call here.",
        "Type it.\ntype_text(element_id=\"7\")",
    ];

    for raw in turns {
        let first = raw.lines().last().unwrap_or_default();
        let verdict = parse_candidate(raw)
            .and_then(|c| check_element_exists(&c.action, &page_ids).map(|_| c))
            .and_then(|c| check_repeat_loop(&c.action, &history, 2).map(|_| c));
        match verdict {
            Ok(c) => println!("ok      {first:<55} -> {}", c.action),
            Err(e) => println!("reject  {first:<55} -> [{}] {}", e.check.as_str(), e.feedback),
        }
    }
}
