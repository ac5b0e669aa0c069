//! Greedy exact-match evaluation at a fixed test-time latent count.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::forge::render::prompt_layout;
use crate::forge::{boxed_answer, Family, ToySample};
use crate::model::{decode_with_latents, DecodeConfig, Model};

use super::HarnessError;

/// One evaluation result; the CSV schema of reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub stage: String,
    pub k_test: usize,
    pub accuracy: f64,
    pub lookup_accuracy: Option<f64>,
    pub count_accuracy: Option<f64>,
    pub samples: usize,
    pub truncated: usize,
    pub wall_clock_s: f64,
}

/// Decoding budget that fits the longest chain of thought at `k` latents per segment.
pub fn eval_decode_config(k_test: usize) -> DecodeConfig {
    DecodeConfig {
        latent_count: k_test,
        temperature: 0.0,
        max_new: 40 + 3 * k_test,
    }
}

/// Whether greedy decoding at `k_test` ends with the gold answer boxed last.
pub fn judge_sample(model: &Model, sample: &ToySample, k_test: usize) -> Result<(bool, bool), HarnessError> {
    // Greedy decoding never touches the generator.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let decoded = decode_with_latents(model, &prompt_layout(sample), &eval_decode_config(k_test), &mut rng)?;
    let correct = boxed_answer(&decoded.trajectory.tokens()) == Some(sample.answer);
    Ok((correct, decoded.trajectory.truncated))
}

pub fn evaluate(
    model: &Model,
    samples: &[ToySample],
    k_test: usize,
    run_id: &str,
    stage: &str,
) -> Result<MetricsRow, HarnessError> {
    let start = Instant::now();
    let mut tally = [(0usize, 0usize); 2];
    let mut truncated = 0;
    for s in samples {
        let (ok, cut) = judge_sample(model, s, k_test)?;
        let t = &mut tally[match s.family {
            Family::Lookup => 0,
            Family::Count => 1,
        }];
        t.0 += ok as usize;
        t.1 += 1;
        truncated += cut as usize;
    }
    let frac = |(c, n): (usize, usize)| (n > 0).then(|| c as f64 / n as f64);
    let total = tally[0].1 + tally[1].1;
    Ok(MetricsRow {
        run_id: run_id.to_string(),
        stage: stage.to_string(),
        k_test,
        accuracy: frac((tally[0].0 + tally[1].0, total)).unwrap_or(0.0),
        lookup_accuracy: frac(tally[0]),
        count_accuracy: frac(tally[1]),
        samples: total,
        truncated,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
