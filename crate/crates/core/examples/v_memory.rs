//! Peak activation memory of the V-shape family against its closed forms.
//!
//! cargo run --example v_memory

use pipeblock::{assemble, build_v_block, build_v_block_with, exact_peak, lifespans, VOffsets, VVariant};

fn main() -> pipeblock::Result<()> {
    for d in [4usize, 6, 8, 12] {
        let m_total = 2.0 * d as f64;
        let unit = m_total / d as f64;
        let expect_min = (d + 2).div_ceil(3) as f64 * unit;
        let expect_half = (d + 1).div_ceil(2) as f64 * unit;
        let min = exact_peak(&assemble(&build_v_block(d, VVariant::Min)?, 4 * d)?);
        let half = exact_peak(&assemble(&build_v_block(d, VVariant::Half)?, 4 * d)?);
        let zb = exact_peak(&assemble(&build_v_block(d, VVariant::Zb)?, 4 * d)?);
        println!(
            "d={d:>2}  v-min {:>4} (closed form {expect_min})  v-half {:>4} (closed form {expect_half})  v-zb {:>4} (M = {m_total})",
            min.peak, half.peak, zb.peak
        );
    }

    // Lifespans pair long and short stages on each device.
    let block = build_v_block(4, VVariant::Half)?;
    let table = lifespans(&block);
    for device in 1..=4 {
        let spans: Vec<String> = table
            .on_device(device)
            .map(|l| format!("stage {} lives {}", l.stage, l.length()))
            .collect();
        println!("device {device}: {}", spans.join(", "));
    }

    // Wider uniform offsets trade memory for fewer bubbles.
    for (d0, d1) in [(1, 1), (2, 1), (2, 2), (3, 2), (4, 2)] {
        match build_v_block_with(6, &VOffsets::uniform(6, d0, d1)) {
            Ok(block) => {
                let peak = exact_peak(&assemble(&block, 24)?).peak;
                println!("d=6 offsets ({d0}, {d1}): peak {peak} of M = 12");
            }
            Err(e) => println!("d=6 offsets ({d0}, {d1}): {e}"),
        }
    }
    Ok(())
}
