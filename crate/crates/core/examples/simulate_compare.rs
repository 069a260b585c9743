//! Simulates schedules under measured pass durations and compares them.
//!
//! cargo run --example simulate_compare

use pipeblock::sim::compare;
use pipeblock::{assemble, build_v_block, simulate, RunTimeProfile, VVariant};

fn main() -> pipeblock::Result<()> {
    // Milliseconds per forward, activation backward and weight backward.
    let profile = RunTimeProfile::new(12.96, 13.22, 9.76)?;

    let schedule = assemble(&build_v_block(8, VVariant::Half)?, 32)?;
    let sim = simulate(&schedule, &profile)?;
    println!("v-half d=8 n=32: makespan {:.2} ms, bubble rate {:.2}%", sim.makespan, 100.0 * sim.bubble_rate);
    for (device, idle) in sim.idle.iter().enumerate() {
        println!("  device {}: idle {idle:.2} ms, peak {}", device + 1, sim.peak_per_device()[device]);
    }

    let blocks = ["v-zb", "v-half", "v-min", "1f1b", "1f1b-r"];
    for n in [16, 64] {
        println!("d=16 n={n}");
        for row in compare(&blocks, 16, n, &profile) {
            match (row.bubble_rate, row.error) {
                (Some(rate), _) => println!(
                    "  {:<8} bubble {:>6.2}%  peak {}",
                    row.block,
                    100.0 * rate,
                    row.peak_fraction.map_or("-".into(), |p| format!("{p:.3}M"))
                ),
                (None, err) => println!("  {:<8} failed: {}", row.block, err.unwrap_or_default()),
            }
        }
    }
    Ok(())
}
