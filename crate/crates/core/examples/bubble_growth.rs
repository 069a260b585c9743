//! Classifies how bubbles grow with the number of microbatches.
//!
//! cargo run --example bubble_growth

use pipeblock::{assemble, build_v_block, growth_rate, simulate, vhalf_condition, RunTimeProfile, VVariant};

fn main() -> pipeblock::Result<()> {
    let profiles = [(1.0, 1.0, 1.0), (1.0, 1.0, 0.2), (1.0, 2.0, 0.5), (12.96, 13.22, 9.76)];
    for (f, b, w) in profiles {
        let p = RunTimeProfile::new(f, b, w)?;
        println!("profile ({f}, {b}, {w}), v-half condition holds: {}", vhalf_condition(&p));
        for v in [VVariant::Min, VVariant::Half, VVariant::Zb] {
            let block = build_v_block(4, v)?;
            let r = growth_rate(&block, &p)?;
            println!(
                "  {:<7} g {:>7.3}  repeating bubble {:>6.3}  {:?}",
                v.id(),
                r.g,
                r.repeating_bubble,
                r.classification
            );
        }
    }

    // The makespan increment per extra microbatch converges to g.
    let p = RunTimeProfile::new(1.0, 1.0, 0.2)?;
    let block = build_v_block(4, VVariant::Min)?;
    let g = growth_rate(&block, &p)?.g;
    let spans: Vec<f64> = (8..=12).map(|n| simulate(&assemble(&block, n).unwrap(), &p).unwrap().makespan).collect();
    let steps: Vec<String> = spans.windows(2).map(|w| format!("{:.2}", w[1] - w[0])).collect();
    println!("v-min increments {} vs g {g:.2}", steps.join(" "));
    Ok(())
}
