//! Teacher-forced observation-token accuracy with and without auxiliary images.

use serde::Serialize;

use crate::autodiff::Graph;
use crate::forge::render::{no_aux_layout, teacher_layout};
use crate::forge::ToySample;
use crate::model::{AttentionMaskSpec, LatentFill, Model, SegmentRole, SequenceLayout};

use crate::par::par_map;
use super::SftError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObsAccuracy {
    pub with_aux: f64,
    pub without_aux: f64,
}

impl ObsAccuracy {
    /// `with_aux - without_aux`.
    pub fn gap(&self) -> f64 {
        self.with_aux - self.without_aux
    }
}

/// `(correct, total)` greedy next-token predictions on observation positions.
fn observation_hits(model: &Model, layout: &SequenceLayout) -> Result<(usize, usize), SftError> {
    let positions = layout.positions_with_role(SegmentRole::ObservationText);
    if positions.is_empty() {
        return Ok((0, 0));
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let mask = AttentionMaskSpec::causal(layout.len());
    let out = model.forward(&mut g, &bound, layout, &mask, LatentFill::Given(&[]))?;
    let logits = g.value(out.logits);
    let tokens = layout.tokens();
    let hits = positions
        .iter()
        .filter(|&&p| {
            let row = logits.row(p - 1);
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &x)| if x > row[b] { i } else { b });
            tokens[p].map(|t| t.index()) == Some(best)
        })
        .count();
    Ok((hits, positions.len()))
}

/// Observation accuracy with the auxiliary images in context and with them removed.
pub fn measure_obs_accuracy(model: &Model, samples: &[ToySample]) -> Result<ObsAccuracy, SftError> {
    let refs: Vec<&ToySample> = samples.iter().collect();
    let results = par_map(&refs, |s| -> Result<_, SftError> {
        let a = observation_hits(model, &teacher_layout(s))?;
        let b = observation_hits(model, &no_aux_layout(s))?;
        Ok((a, b))
    });
    let (mut hw, mut tw, mut ho, mut to) = (0, 0, 0, 0);
    for r in results {
        let ((h1, t1), (h2, t2)) = r?;
        hw += h1;
        tw += t1;
        ho += h2;
        to += t2;
    }
    let ratio = |h: usize, t: usize| if t == 0 { 0.0 } else { h as f64 / t as f64 };
    Ok(ObsAccuracy {
        with_aux: ratio(hw, tw),
        without_aux: ratio(ho, to),
    })
}
