//! Searches V-shape offsets for the fewest bubbles under a memory limit.
//!
//! cargo run --release --example adaptive_search

use pipeblock::{frontier, search, MemoryLimit, RunTimeProfile, SearchSpec};

fn main() -> pipeblock::Result<()> {
    let profile = RunTimeProfile::new(12.96, 13.22, 9.76)?;
    let d = 6;

    let spec = SearchSpec::new(d, profile, MemoryLimit::Fraction(0.6));
    let found = search(&spec)?;
    let c = found.best.candidate;
    println!(
        "limit 0.6M: K={} offsets ({}, {}, {}, {}) turns {:?}",
        c.k, c.d0_lt, c.d1_le, c.d0_ge, c.d1_gt, c.turns
    );
    println!(
        "  bubble {:.2}%, peak {:.3}M, {} of {} candidates feasible",
        100.0 * found.best.bubble_rate,
        found.peak_fraction,
        found.feasible,
        found.evaluated
    );

    let limits: Vec<MemoryLimit> = [0.45, 0.55, 0.65, 0.75, 0.85, 1.0].map(MemoryLimit::Fraction).to_vec();
    for point in frontier(&spec, &limits)? {
        match point.bubble_rate() {
            Some(rate) => println!("  {:>5}: {:.2}%", point.limit.to_string(), 100.0 * rate),
            None => println!("  {:>5}: infeasible", point.limit.to_string()),
        }
    }
    Ok(())
}
