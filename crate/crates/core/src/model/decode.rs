//! Sampling and fixed-length latent decoding.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{logsumexp_row, Graph, Tensor, Var};

use super::layout::{SegmentRole, SequenceLayout};
use super::transformer::{Model, Session};
use super::vocab::{self, TokenId};
use super::ModelError;

/// One generated step.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    /// `logprob` is `None` for force-inserted tokens, which were never sampled.
    Text { token: TokenId, logprob: Option<f64> },
    Latent { vector: Tensor },
}

impl Step {
    pub fn is_forced(&self) -> bool {
        matches!(self, Step::Text { logprob: None, .. })
    }
}

/// Response produced by [`decode_with_latents`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub truncated: bool,
}

impl Trajectory {
    pub fn tokens(&self) -> Vec<TokenId> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                Step::Text { token, .. } => Some(*token),
                Step::Latent { .. } => None,
            })
            .collect()
    }

    pub fn latent_count(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Latent { .. })).count()
    }

    /// Lengths of consecutive latent runs.
    pub fn latent_runs(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut cur = 0;
        let mut inside = false;
        for s in &self.steps {
            match s {
                Step::Text { token, .. } if *token == vocab::LATENT_START => {
                    inside = true;
                    cur = 0;
                }
                Step::Latent { .. } => cur += 1,
                Step::Text { token, .. } if *token == vocab::LATENT_END && inside => {
                    runs.push(cur);
                    inside = false;
                }
                _ => {}
            }
        }
        if inside {
            runs.push(cur);
        }
        runs
    }

    pub fn text(&self) -> String {
        vocab::render(&self.tokens())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Latent slots emitted after each sampled `<latent>`.
    pub latent_count: usize,
    pub temperature: f64,
    /// Cap on generated positions, latent slots and forced tokens included.
    pub max_new: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            latent_count: 8,
            temperature: 0.0,
            max_new: 48,
        }
    }
}

/// Columns the sampler never draws from: the latent-end marker is always forced.
pub fn sampling_exclusions(vocab_size: usize) -> Vec<bool> {
    let mut e = vec![false; vocab_size];
    e[vocab::LATENT_END.index()] = true;
    e
}

/// Draws a token from `softmax(logits / temperature)`.
///
/// Temperature 0 picks the argmax with ties to the lowest id and reports
/// log-probability 0. Entries flagged in `excluded` have zero probability.
pub fn sample_token<R: Rng>(
    logits: &[f64],
    temperature: f64,
    excluded: Option<&[bool]>,
    rng: &mut R,
) -> (TokenId, f64) {
    let ok = |j: usize| excluded.is_none_or(|e| !e[j]);
    if temperature <= 0.0 {
        let mut best = None;
        for (j, v) in logits.iter().enumerate() {
            if ok(j) && best.is_none_or(|(_, b)| *v > b) {
                best = Some((j, *v));
            }
        }
        let (j, _) = best.expect("at least one admissible token");
        return (TokenId(j as u16), 0.0);
    }
    let inv = 1.0 / temperature;
    let scaled: Vec<f64> = logits.iter().map(|v| v * inv).collect();
    let lse = logsumexp_row(&scaled, excluded);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (j, z) in scaled.iter().enumerate() {
        if !ok(j) {
            continue;
        }
        last = Some(j);
        acc += (z - lse).exp();
        if u < acc {
            return (TokenId(j as u16), z - lse);
        }
    }
    let j = last.expect("at least one admissible token");
    (TokenId(j as u16), scaled[j] - lse)
}

/// Generated layout plus the step record.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub layout: SequenceLayout,
    pub trajectory: Trajectory,
}

/// Autoregressive generation after `prompt`.
///
/// When `<latent>` is sampled, the next `latent_count` positions are latent
/// slots whose input is the final-layer state of the preceding position; then
/// `</latent>` is inserted without sampling. Stops at `<eos>` or after
/// `max_new` positions (flagging truncation).
pub fn decode_with_latents<R: Rng>(
    model: &Model,
    prompt: &SequenceLayout,
    config: &DecodeConfig,
    rng: &mut R,
) -> Result<Decoded, ModelError> {
    let cfg = model.config();
    let excluded = sampling_exclusions(cfg.vocab_size);
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let mut session = Session::new(&bound, cfg);
    let mut layout = prompt.clone();
    let mut latents: HashMap<usize, Var> = HashMap::new();
    let mut trajectory = Trajectory::default();

    let n = layout.len();
    let x = model.embed(&mut g, &bound, &layout, 0..n, &latents)?;
    let causal = |start: usize, rows: usize| -> Vec<bool> {
        let mut a = Vec::with_capacity(rows * (start + rows));
        for q in start..start + rows {
            a.extend((0..start + rows).map(|k| k <= q));
        }
        a
    };
    let mut chunk = session.extend(&mut g, x, causal(0, n))?;

    // Appends the last layout position to the session.
    let advance = |g: &mut Graph,
                   session: &mut Session,
                   layout: &SequenceLayout,
                   latents: &HashMap<usize, Var>|
     -> Result<_, ModelError> {
        let p = layout.len() - 1;
        let x = model.embed(g, &bound, layout, p..p + 1, latents)?;
        session.extend(g, x, causal(p, 1))
    };
    let room = |layout: &SequenceLayout, generated: usize| {
        generated < config.max_new && layout.len() < cfg.max_positions
    };

    let mut generated = 0;
    'outer: loop {
        if !room(&layout, generated) {
            trajectory.truncated = true;
            break;
        }
        let logits = g.value(chunk.logits);
        let last = logits.rows() - 1;
        let (token, lp) = sample_token(logits.row(last), config.temperature, Some(&excluded), rng);
        trajectory.steps.push(Step::Text {
            token,
            logprob: Some(lp),
        });
        layout.push_token(SegmentRole::PlainText, token)?;
        generated += 1;
        chunk = advance(&mut g, &mut session, &layout, &latents)?;
        if token == vocab::EOS {
            break;
        }
        if token == vocab::LATENT_START {
            for _ in 0..config.latent_count {
                if !room(&layout, generated) {
                    trajectory.truncated = true;
                    break 'outer;
                }
                let top = chunk.hidden[cfg.layers];
                let rows = g.value(top).rows();
                let v = g.slice_rows(top, rows - 1, 1)?;
                trajectory.steps.push(Step::Latent {
                    vector: g.value(v).clone().reshaped(&[cfg.hidden])?,
                });
                layout.push_latent_slot();
                latents.insert(layout.len() - 1, v);
                generated += 1;
                chunk = advance(&mut g, &mut session, &layout, &latents)?;
            }
            if !room(&layout, generated) {
                trajectory.truncated = true;
                break;
            }
            trajectory.steps.push(Step::Text {
                token: vocab::LATENT_END,
                logprob: None,
            });
            layout.push_token(SegmentRole::PlainText, vocab::LATENT_END)?;
            generated += 1;
            chunk = advance(&mut g, &mut session, &layout, &latents)?;
        }
    }
    Ok(Decoded { layout, trajectory })
}

/// Latent vectors of a trajectory, in order.
pub fn latent_vectors(trajectory: &Trajectory) -> Vec<Tensor> {
    trajectory
        .steps
        .iter()
        .filter_map(|s| match s {
            Step::Latent { vector } => Some(vector.clone()),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_breaks_ties_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_token(&[1.0, 3.0, 3.0], 0.0, None, &mut rng).0, TokenId(1));
        assert_eq!(sample_token(&[10.0, 0.0, 0.0], 0.0, None, &mut rng), (TokenId(0), 0.0));
    }

    #[test]
    fn equal_logits_give_uniform_logprob() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, lp) = sample_token(&[0.5; 8], 1.0, None, &mut rng);
        assert!((lp - (1.0f64 / 8.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn excluded_never_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = [false, true, false];
        for _ in 0..200 {
            let (t, _) = sample_token(&[0.0, 5.0, 0.0], 1.0, Some(&ex), &mut rng);
            assert_ne!(t, TokenId(1));
        }
    }
}
