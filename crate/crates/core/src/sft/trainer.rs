//! Shared optimizer loop and the latent-only gradient route.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{GradMap, Graph, Tensor};
use crate::forge::ToySample;
use crate::model::{AttentionMaskSpec, LatentFill, Model, SegmentRole, SequenceLayout};
use crate::optim::AdamW;
use crate::par::par_map;

use super::config::StageConfig;
use super::diagnostic::ObsAccuracy;
use super::losses::{cosine_alignment, label_mask, latent_only_surrogate, ntp_loss};
use super::SftError;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ntp: f64,
    /// Alignment loss value (0 in stage 1).
    pub align: f64,
}

/// Where the alignment loss reads student hidden states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignAt {
    Observations,
    Latents,
}

/// One sample's NTP plus alignment objective, with alignment gradients reaching
/// the parameters only through the generated latent vectors.
///
/// The student graph produces the latents autoregressively and carries the NTP
/// loss. A second graph with frozen parameters replays the sequence with those
/// latents as constants, evaluates the alignment loss and reads its gradient at
/// each latent input. That gradient enters the student graph as a constant in
/// the linear surrogate `Σ_j g_jᵀ e_j`.
pub struct SurrogateStep<'a> {
    pub layout: &'a SequenceLayout,
    pub mask: &'a AttentionMaskSpec,
    pub align_at: AlignAt,
    /// Per layer `1..=L`, one row per aligned position.
    pub targets: &'a [Tensor],
    pub weight: f64,
}

impl SurrogateStep<'_> {
    fn positions(&self) -> Vec<usize> {
        match self.align_at {
            AlignAt::Observations => self.layout.positions_with_role(SegmentRole::ObservationText),
            AlignAt::Latents => self.layout.latent_positions(),
        }
    }

    /// Alignment value and its gradient at each latent input, with `latents`
    /// held fixed and the model frozen.
    pub fn latent_gradients(&self, model: &Model, latents: &[Tensor]) -> Result<(f64, Vec<Tensor>), SftError> {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let out = model.forward(&mut g, &bound, self.layout, self.mask, LatentFill::Given(latents))?;
        let loss = cosine_alignment(&mut g, &out.hidden, &self.positions(), self.targets)?;
        let grads = g.backward(loss)?;
        let d = model.config().hidden;
        let per_slot = out
            .latent_inputs
            .iter()
            .map(|&v| grads.node(v).cloned().unwrap_or_else(|| Tensor::zeros(&[1, d])))
            .collect();
        Ok((g.value(loss).item(), per_slot))
    }

    /// Alignment value with the given latents and frozen parameters.
    pub fn alignment_with_latents(&self, model: &Model, latents: &[Tensor]) -> Result<f64, SftError> {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let out = model.forward(&mut g, &bound, self.layout, self.mask, LatentFill::Given(latents))?;
        let loss = cosine_alignment(&mut g, &out.hidden, &self.positions(), self.targets)?;
        Ok(g.value(loss).item())
    }

    /// Parameter gradient of the surrogate alone, with the alignment value.
    pub fn surrogate_gradient(&self, model: &Model) -> Result<(f64, GradMap), SftError> {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let out = model.forward(&mut g, &bound, self.layout, self.mask, LatentFill::Autoregressive)?;
        let latents: Vec<Tensor> = out.latent_inputs.iter().map(|&v| g.value(v).clone()).collect();
        let (align, slot_grads) = self.latent_gradients(model, &latents)?;
        let surrogate = latent_only_surrogate(&mut g, &slot_grads, &out.latent_inputs)?;
        Ok((align, g.backward(surrogate)?.into_params()))
    }

    pub fn run(&self, model: &Model) -> Result<(GradMap, StepLosses), SftError> {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let out = model.forward(&mut g, &bound, self.layout, self.mask, LatentFill::Autoregressive)?;
        let labels = label_mask(self.layout);
        let ntp = ntp_loss(&mut g, out.logits, self.layout, &labels)?;
        let latents: Vec<Tensor> = out.latent_inputs.iter().map(|&v| g.value(v).clone()).collect();
        let (align, slot_grads) = self.latent_gradients(model, &latents)?;
        let surrogate = latent_only_surrogate(&mut g, &slot_grads, &out.latent_inputs)?;
        let weighted = g.scale(surrogate, self.weight);
        let total = g.add(ntp, weighted)?;
        let grads = g.backward(total)?.into_params();
        let ntp = g.value(ntp).item();
        Ok((
            grads,
            StepLosses {
                total: ntp + self.weight * align,
                ntp,
                align,
            },
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub stage: String,
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub ntp: f64,
    pub align: f64,
    pub grad_norm: f64,
    pub obs_acc_with_aux: Option<f64>,
    pub obs_acc_without_aux: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    pub fn diagnostics(&self) -> impl Iterator<Item = (usize, ObsAccuracy)> + '_ {
        self.rows.iter().filter_map(|r| {
            Some((
                r.step,
                ObsAccuracy {
                    with_aux: r.obs_acc_with_aux?,
                    without_aux: r.obs_acc_without_aux?,
                },
            ))
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SftError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minibatch AdamW over shuffled epochs. Gradients of a step are the mean over
/// `batch_size × accumulation` samples, summed in sample order.
pub(crate) fn run_stage<F, E>(
    model: &mut Model,
    samples: &[ToySample],
    cfg: &StageConfig,
    stage: &str,
    mut evaluate: E,
    step_fn: F,
) -> Result<TrainLog, SftError>
where
    F: Fn(&Model, &ToySample) -> Result<(GradMap, StepLosses), SftError> + Sync,
    E: FnMut(&Model, usize) -> Result<Option<ObsAccuracy>, SftError>,
{
    if samples.is_empty() {
        return Err(SftError::Config("empty training set".into()));
    }
    let mut opt = AdamW::new(cfg.optimizer.clone());
    let mut log = TrainLog::default();
    let per_step = cfg.batch_size * cfg.accumulation;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;
    let record_eval = |model: &Model, step: usize, evaluate: &mut E, row: &mut LogRow| -> Result<(), SftError> {
        if let Some(acc) = evaluate(model, step)? {
            row.obs_acc_with_aux = Some(acc.with_aux);
            row.obs_acc_without_aux = Some(acc.without_aux);
        }
        Ok(())
    };
    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        for idx in order.chunks(per_step) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch: Vec<&ToySample> = idx.iter().map(|&i| &samples[i]).collect();
            let results = par_map(&batch, |s| step_fn(model, s));
            let mut grads = GradMap::new();
            let mut sums = StepLosses::default();
            let n = results.len() as f64;
            for r in results {
                let (gm, l) = r?;
                grads.add_scaled(&gm, 1.0 / n);
                sums.total += l.total / n;
                sums.ntp += l.ntp / n;
                sums.align += l.align / n;
            }
            if !sums.total.is_finite() || !grads.is_finite() {
                return Err(SftError::Diverged { step });
            }
            let grad_norm = opt.step(model.params_mut(), &grads);
            step += 1;
            let mut row = LogRow {
                stage: stage.to_string(),
                step,
                epoch,
                loss: sums.total,
                ntp: sums.ntp,
                align: sums.align,
                grad_norm,
                obs_acc_with_aux: None,
                obs_acc_without_aux: None,
            };
            if cfg.eval_interval > 0 && step.is_multiple_of(cfg.eval_interval) {
                record_eval(model, step, &mut evaluate, &mut row)?;
            }
            log::debug!("{stage} step {step}: loss {:.4} ntp {:.4} align {:.4}", sums.total, sums.ntp, sums.align);
            log.rows.push(row);
        }
    }
    if let Some(row) = log.rows.last_mut() {
        if row.obs_acc_with_aux.is_none() && cfg.eval_interval > 0 {
            record_eval(model, step, &mut evaluate, row)?;
        }
    }
    Ok(log)
}
