//! Three-stage curation: necessity filter, correctness filter, observation tagging.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::vocab::{self, TokenId};

use super::dataset::{DatasetRecord, Provenance, SCHEMA_VERSION};
use super::judges::{StrongJudge, WeakJudge};
use super::tasks::{self, CotSegment, CountShape, Family, LookupShape, ObservationSpan, ToySample};
use super::ForgeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Drop,
}

/// Keeps the sample only when the weak judge, looking at the pooled question
/// image, fails to produce the gold answer. Abstention counts as failure.
pub fn stage1_filter(sample: &ToySample, judge: &WeakJudge) -> Verdict {
    if judge.answer(sample) == Some(sample.answer) {
        Verdict::Drop
    } else {
        Verdict::Keep
    }
}

/// Keeps the sample only when the strong judge, reading the auxiliary images,
/// reproduces the gold answer.
pub fn stage2_filter(sample: &ToySample, judge: &StrongJudge) -> Verdict {
    if judge.answer(sample) == Some(sample.answer) {
        Verdict::Keep
    } else {
        Verdict::Drop
    }
}

/// Wraps every observation span in `<observation>` / `</observation>`, leaving
/// all other tokens untouched. Spans are rewritten to point at the wrapped content.
pub fn stage3_tag_observations(sample: &ToySample) -> Result<ToySample, ForgeError> {
    if sample.tagged {
        return Err(ForgeError::AlreadyTagged(sample.id));
    }
    let mut spans = sample.observation_spans.clone();
    spans.sort_by_key(|s| (s.segment, s.start));
    for w in spans.windows(2) {
        if w[0].segment == w[1].segment && w[1].start < w[0].end {
            return Err(ForgeError::OverlappingSpans(sample.id));
        }
    }
    let mut out = sample.clone();
    let mut new_spans = Vec::with_capacity(spans.len());
    for (seg_idx, seg) in out.cot.iter_mut().enumerate() {
        let CotSegment::Text(tokens) = seg else {
            continue;
        };
        let here: Vec<&ObservationSpan> = spans.iter().filter(|s| s.segment == seg_idx).collect();
        if here.is_empty() {
            continue;
        }
        let mut rebuilt = Vec::with_capacity(tokens.len() + 2 * here.len());
        let mut cursor = 0;
        for s in here {
            if s.end > tokens.len() || s.start > s.end {
                return Err(ForgeError::SpanOutOfRange(sample.id));
            }
            rebuilt.extend_from_slice(&tokens[cursor..s.start]);
            rebuilt.push(vocab::OBS_START);
            let start = rebuilt.len();
            rebuilt.extend_from_slice(&tokens[s.start..s.end]);
            new_spans.push(ObservationSpan {
                segment: seg_idx,
                start,
                end: rebuilt.len(),
            });
            rebuilt.push(vocab::OBS_END);
            cursor = s.end;
        }
        rebuilt.extend_from_slice(&tokens[cursor..]);
        *tokens = rebuilt;
    }
    if new_spans.len() != spans.len() {
        return Err(ForgeError::SpanOutOfRange(sample.id));
    }
    out.observation_spans = new_spans;
    out.tagged = true;
    Ok(out)
}

/// Inverse of [`stage3_tag_observations`].
pub fn strip_observation_tags(sample: &ToySample) -> ToySample {
    let mut out = sample.clone();
    if !sample.tagged {
        return out;
    }
    let is_tag = |t: &TokenId| *t == vocab::OBS_START || *t == vocab::OBS_END;
    for span in out.observation_spans.iter_mut() {
        let CotSegment::Text(tokens) = &sample.cot[span.segment] else {
            continue;
        };
        let before = tokens[..span.start].iter().filter(|t| is_tag(t)).count();
        span.start -= before;
        span.end -= before;
    }
    for seg in out.cot.iter_mut() {
        if let CotSegment::Text(tokens) = seg {
            tokens.retain(|t| !is_tag(t));
        }
    }
    out.tagged = false;
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    /// Candidates generated before filtering.
    pub sample_count: usize,
    pub seed: u64,
    pub lookup_fraction: f64,
    /// Fraction of candidates whose auxiliary evidence is deliberately damaged.
    pub corruption_rate: f64,
    pub lookup: LookupShape,
    pub count: CountShape,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            sample_count: 5000,
            seed: 0,
            lookup_fraction: 0.8,
            corruption_rate: 0.1,
            lookup: LookupShape::default(),
            count: CountShape::default(),
        }
    }
}

/// Candidate `index` of a run, drawn from its own stream of the run seed.
pub fn generate_candidate(config: &CurationConfig, index: u64) -> Result<ToySample, ForgeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let mut sample = if rng.random_bool(config.lookup_fraction) {
        tasks::generate_lookup_task(&mut rng, config.lookup, index)?
    } else {
        tasks::generate_count_task(&mut rng, config.count, index)?
    };
    if rng.random_bool(config.corruption_rate) {
        tasks::corrupt(&mut sample, &mut rng);
    }
    Ok(sample)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub candidates: usize,
    pub dropped_stage1: usize,
    pub dropped_stage2: usize,
    pub kept: usize,
    pub corrupted_ids: Vec<u64>,
    pub kept_lookup: usize,
    pub kept_count: usize,
}

/// Runs generation and all three curation stages.
pub fn curate(config: &CurationConfig) -> Result<(Vec<DatasetRecord>, CurationReport), ForgeError> {
    let weak = WeakJudge;
    let strong = StrongJudge;
    let mut report = CurationReport {
        candidates: config.sample_count,
        ..Default::default()
    };
    let mut records = Vec::new();
    for index in 0..config.sample_count as u64 {
        let sample = generate_candidate(config, index)?;
        if sample.corrupted {
            report.corrupted_ids.push(sample.id);
        }
        if stage1_filter(&sample, &weak) == Verdict::Drop {
            report.dropped_stage1 += 1;
            continue;
        }
        if stage2_filter(&sample, &strong) == Verdict::Drop {
            report.dropped_stage2 += 1;
            continue;
        }
        let provenance = Provenance {
            family: sample.family,
            seed: config.seed,
            stream: index,
            corrupted: sample.corrupted,
            weak_answer: weak.answer(&sample),
            strong_answer: strong.answer(&sample),
            stage1: Verdict::Keep,
            stage2: Verdict::Keep,
        };
        let tagged = stage3_tag_observations(&sample)?;
        match tagged.family {
            Family::Lookup => report.kept_lookup += 1,
            Family::Count => report.kept_count += 1,
        }
        records.push(DatasetRecord {
            schema_version: SCHEMA_VERSION,
            sample: tagged,
            provenance,
        });
    }
    report.kept = records.len();
    Ok((records, report))
}
