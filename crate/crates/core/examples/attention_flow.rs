//! Prints the stage-2 attention mask of one training sample as a character map.
//!
//! Rows are queries, columns keys. `#` marks an allowed key, `.` a blocked one.

use monet::forge::render::student_layout;
use monet::forge::{curate, CurationConfig};
use monet::model::{AttentionMaskSpec, MaskMode, SegmentRole};

fn role_char(role: SegmentRole) -> char {
    match role {
        SegmentRole::QuestionText => 'q',
        SegmentRole::QuestionImage => 'I',
        SegmentRole::AuxImage => 'A',
        SegmentRole::Latent => 'L',
        SegmentRole::ObservationText => 'o',
        SegmentRole::PlainText => 't',
        SegmentRole::Answer => 'a',
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (records, _) = curate(&CurationConfig { sample_count: 20, ..CurationConfig::default() })?;
    let sample = &records[0].sample;
    let layout = student_layout(sample, 2);
    let mask = AttentionMaskSpec::build(&layout, MaskMode::MonetStage2)?;
    let roles: Vec<char> = layout.roles().into_iter().map(role_char).collect();

    println!("     {}", roles.iter().collect::<String>());
    for (q, &r) in roles.iter().enumerate() {
        let row: String = (0..layout.len()).map(|k| if mask.allowed(q, k) { '#' } else { '.' }).collect();
        println!("{q:>3} {r} {row}");
    }
    let aux = layout.positions_with_role(SegmentRole::AuxImage);
    let readers = (0..layout.len()).filter(|&q| aux.iter().any(|&k| mask.allowed(q, k) && q > k)).count();
    println!("{} aux positions, read by {} queries", aux.len(), readers);
    Ok(())
}
