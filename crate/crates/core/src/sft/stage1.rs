//! Warm-up: next-token prediction on full interleaved sequences.

use crate::autodiff::{GradMap, Graph};
use crate::forge::render::teacher_layout;
use crate::forge::ToySample;
use crate::model::{AttentionMaskSpec, LatentFill, Model};

use super::config::StageConfig;
use super::diagnostic::measure_obs_accuracy;
use super::losses::{label_mask, ntp_loss};
use super::trainer::{run_stage, StepLosses, TrainLog};
use super::SftError;

pub fn stage1_step(model: &Model, sample: &ToySample) -> Result<(GradMap, StepLosses), SftError> {
    let layout = teacher_layout(sample);
    let mask = AttentionMaskSpec::causal(layout.len());
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let out = model.forward(&mut g, &bound, &layout, &mask, LatentFill::Given(&[]))?;
    let loss = ntp_loss(&mut g, out.logits, &layout, &label_mask(&layout))?;
    let ntp = g.value(loss).item();
    Ok((
        g.backward(loss)?.into_params(),
        StepLosses {
            total: ntp,
            ntp,
            align: 0.0,
        },
    ))
}

/// Trains `model` in place. The observation-accuracy diagnostic is measured on
/// `eval` every `eval_interval` steps and after the last step.
pub fn run_stage1(
    model: &mut Model,
    train: &[ToySample],
    eval: &[ToySample],
    cfg: &StageConfig,
) -> Result<TrainLog, SftError> {
    cfg.validate(false)?;
    let eval = &eval[..eval.len().min(cfg.eval_samples)];
    run_stage(
        model,
        train,
        cfg,
        "stage1",
        |m, _| {
            if eval.is_empty() {
                Ok(None)
            } else {
                measure_obs_accuracy(m, eval).map(Some)
            }
        },
        stage1_step,
    )
}
