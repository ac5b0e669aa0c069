//! Sample to sequence-layout rendering for each pipeline stage.

use crate::model::vocab;
use crate::model::{Segment, SegmentRole, SequenceLayout};

use super::tasks::{CotSegment, ToySample};

fn layout(segments: Vec<Segment>) -> SequenceLayout {
    SequenceLayout::new(segments).expect("roles and contents are paired by construction")
}

fn prompt_segments(sample: &ToySample) -> Vec<Segment> {
    vec![
        Segment::text(SegmentRole::QuestionText, sample.question_tokens.clone()),
        Segment::image(SegmentRole::QuestionImage, sample.question_grid.pooled()),
    ]
}

/// Question text followed by the pooled question image.
pub fn prompt_layout(sample: &ToySample) -> SequenceLayout {
    layout(prompt_segments(sample))
}

/// Full interleaved sequence with auxiliary images inline, as seen by the
/// warm-up model and the stage-2 teacher.
pub fn teacher_layout(sample: &ToySample) -> SequenceLayout {
    let mut segs = prompt_segments(sample);
    for (i, seg) in sample.cot.iter().enumerate() {
        match seg {
            CotSegment::Aux(view) => segs.push(Segment::image(SegmentRole::AuxImage, view.grid.one_hot())),
            CotSegment::Text(tokens) => {
                let mut spans: Vec<_> = sample.observation_spans.iter().filter(|s| s.segment == i).collect();
                spans.sort_by_key(|s| s.start);
                let mut cursor = 0;
                for s in spans {
                    if s.start > cursor {
                        segs.push(Segment::text(SegmentRole::PlainText, tokens[cursor..s.start].to_vec()));
                    }
                    segs.push(Segment::text(SegmentRole::ObservationText, tokens[s.start..s.end].to_vec()));
                    cursor = s.end;
                }
                if cursor < tokens.len() {
                    segs.push(Segment::text(SegmentRole::PlainText, tokens[cursor..].to_vec()));
                }
            }
        }
    }
    segs.push(Segment::text(SegmentRole::Answer, sample.answer_tokens()));
    layout(segs)
}

/// Stage-2 student: `k` latent slots directly after each auxiliary image.
pub fn student_layout(sample: &ToySample, k: usize) -> SequenceLayout {
    teacher_layout(sample).with_latents_after_aux(k)
}

/// Auxiliary images removed, `k` latent slots after each `<latent>` marker.
pub fn latent_layout(sample: &ToySample, k: usize) -> SequenceLayout {
    teacher_layout(sample)
        .without_role(SegmentRole::AuxImage)
        .with_latents_after_marker(k, vocab::LATENT_START)
}

/// Teacher layout with auxiliary images removed and nothing in their place.
pub fn no_aux_layout(sample: &ToySample) -> SequenceLayout {
    teacher_layout(sample).without_role(SegmentRole::AuxImage)
}
