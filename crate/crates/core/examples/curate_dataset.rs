//! Generates and filters a dataset, then writes it as JSONL.
//!
//! cargo run --release --example curate_dataset -- [count] [out.jsonl]

use monet::forge::{curate, write_dataset, CurationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let sample_count = args.next().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let out = args.next().unwrap_or_else(|| "curated.jsonl".into());

    let (records, report) = curate(&CurationConfig { sample_count, ..CurationConfig::default() })?;
    println!(
        "{} candidates: {} dropped by the weak judge, {} by the strong judge, {} kept ({} lookup, {} count)",
        report.candidates, report.dropped_stage1, report.dropped_stage2, report.kept, report.kept_lookup, report.kept_count
    );
    println!("{} candidates had a corrupted aux image", report.corrupted_ids.len());

    let s = &records[0].sample;
    println!("\nsample {} ({})\n{}", s.id, s.family.name(), s.question_grid.render());
    for view in s.aux_views() {
        println!("aux view {:?}\n{}", view.bbox, view.grid.render());
    }
    println!("observations: {}", monet::model::vocab::render(&s.observation_tokens()));

    write_dataset(&records, std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
