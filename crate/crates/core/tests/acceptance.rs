//! Full acceptance suite at the reference tier. Prints one line per criterion.

use hermite_lab::acceptance::{run_criterion, Tier, CRITERIA};

#[test]
fn acceptance_reference_tier() {
    let mut failed = Vec::new();
    for id in 1..=CRITERIA.len() {
        let r = run_criterion(id, Tier::Reference, 20260101).unwrap();
        println!("{}", r.line());
        for c in &r.checks {
            println!("       {} {}: {}", if c.passed { "ok " } else { "BAD" }, c.name, c.detail);
        }
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
