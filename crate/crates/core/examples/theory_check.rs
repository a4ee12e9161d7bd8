//! Streaming top-b never re-admits an evicted index; a score that keeps
//! changing with later tokens does.

use retainkv::cache_theory::{check_monotone_eviction, suffix_dependent_trace, theorem_check, topb_selection_trace};

fn main() -> retainkv::Result<()> {
    let scores = [0.3, 0.9, 0.1, 0.5, 0.7];
    for (m, set) in topb_selection_trace(&scores, 2)?.iter().enumerate() {
        println!("after {} items: {set:?}", m + 1);
    }

    // item 0 is weak early and strong later, so global re-selection brings it back
    let a = vec![
        vec![0.1, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![5.0, 0.0, 0.2],
    ];
    let ctl = suffix_dependent_trace(&a, 1);
    println!("control trace {ctl:?}, monotone: {}", check_monotone_eviction(&ctl));

    let rep = theorem_check(2000, 48, 12, 0)?;
    println!("{}", serde_json::to_string_pretty(&rep)?);
    Ok(())
}
