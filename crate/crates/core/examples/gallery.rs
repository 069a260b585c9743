//! Builds every gallery block on four devices and reports its shape and peak.
//!
//! cargo run --example gallery

use pipeblock::{assemble, build_gallery, exact_peak, list_gallery, peak_bound, GalleryParams};

fn main() -> pipeblock::Result<()> {
    let d = 4;
    let n = 4 * d;
    println!("{:<26} {:>6} {:>4} {:>9} {:>6}", "block", "passes", "mpb", "bound", "peak");
    for entry in list_gallery() {
        if d < entry.min_devices {
            continue;
        }
        let block = build_gallery(entry.id, d, GalleryParams::for_microbatches(n))?;
        let mpb = block.microbatches_per_block;
        let schedule = assemble(&block, n.div_ceil(mpb) * mpb)?;
        println!(
            "{:<26} {:>6} {:>4} {:>9.1} {:>6.1}",
            entry.id,
            block.passes.len(),
            mpb,
            peak_bound(&block)?.max,
            exact_peak(&schedule).peak,
        );
    }
    Ok(())
}
