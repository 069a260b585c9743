//! Writes a schedule document, reads it back and shows strict parsing.
//!
//! cargo run --example document_roundtrip

use pipeblock::{assemble, build_v_block, simulate, RunTimeProfile, ScheduleDocument, VVariant};

fn main() -> pipeblock::Result<()> {
    let block = build_v_block(4, VVariant::Min)?;
    let schedule = assemble(&block, 8)?;

    let doc = ScheduleDocument::from_schedule(&schedule).with_block(&block);
    let text = doc.to_json()?;
    let back = ScheduleDocument::parse(&text, true)?;
    println!("cells document: {} passes, round trip equal: {}", back.passes.len(), back == doc);

    let profile = RunTimeProfile::new(1.0, 1.2, 0.8)?;
    let sim = simulate(&schedule, &profile)?;
    let timed = ScheduleDocument::from_simulation(&schedule, &sim, &profile);
    let regridded = ScheduleDocument::parse(&timed.to_json()?, true)?.to_schedule()?;
    let order = |lane: &[pipeblock::ScheduledPass]| lane.iter().map(|p| p.id).collect::<Vec<_>>();
    let same_order = (1..=4).all(|d| order(regridded.lane(d)) == order(schedule.lane(d)));
    println!(
        "timed document maps back to a {}-cell grid with the same per-device order: {same_order}",
        regridded.makespan()
    );

    let tampered = text.replacen("\"kind\": \"F\"", "\"kind\": \"F\", \"colour\": \"red\"", 1);
    match ScheduleDocument::parse(&tampered, true) {
        Ok(_) => println!("strict parse accepted an unknown field"),
        Err(e) => println!("strict parse: {e}"),
    }
    let lenient = ScheduleDocument::parse(&tampered, false)?;
    println!("lenient parse keeps {} passes", lenient.passes.len());
    Ok(())
}
