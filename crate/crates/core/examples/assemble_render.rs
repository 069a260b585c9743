//! Assembles a V-Half pipeline and renders it as text and SVG.
//!
//! cargo run --example assemble_render

use pipeblock::{
    assemble, build_v_block, render_svg, render_text, repeat, squeeze, ScheduleDocument, SvgStyle, TextStyle, VVariant,
};

fn main() -> pipeblock::Result<()> {
    let block = build_v_block(4, VVariant::Half)?;
    let n = 8;

    let raw = repeat(&block, n)?;
    let squeezed = squeeze(&raw);
    let full = assemble(&block, n)?;
    println!(
        "grid length: repeated {}, squeezed {}, reordered {}",
        raw.makespan(),
        squeezed.makespan(),
        full.makespan()
    );

    let doc = ScheduleDocument::from_schedule(&full).with_block(&block);
    print!("{}", render_text(&doc, &TextStyle::default()));

    let path = std::env::temp_dir().join("pipeblock-v-half.svg");
    std::fs::write(&path, render_svg(&doc, &SvgStyle::default()))?;
    println!("svg written to {}", path.display());
    Ok(())
}
