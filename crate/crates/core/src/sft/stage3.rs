//! Latent alignment without auxiliary images against stored targets.

use crate::autodiff::GradMap;
use crate::forge::render::latent_layout;
use crate::forge::ToySample;
use crate::model::{AttentionMaskSpec, Model};

use super::config::{LossWeights, StageConfig};
use super::store::TargetLatentStore;
use super::trainer::{run_stage, AlignAt, StepLosses, SurrogateStep, TrainLog};
use super::SftError;

/// Stage-3 gradient for one sample: NTP plus `beta` times the latent-only
/// surrogate of the latent-alignment loss.
pub fn stage3_step(
    model: &Model,
    sample: &ToySample,
    store: &TargetLatentStore,
    k: usize,
    beta: f64,
) -> Result<(GradMap, StepLosses), SftError> {
    let layout = latent_layout(sample, k);
    let slots = layout.latent_positions().len();
    let stored = store.slots(sample.id).ok_or(SftError::MissingTarget(sample.id))?;
    if stored != slots {
        return Err(SftError::SlotMismatch {
            expected: stored,
            got: slots,
        });
    }
    let targets = store.targets(sample.id)?;
    let mask = AttentionMaskSpec::causal(layout.len());
    SurrogateStep {
        layout: &layout,
        mask: &mask,
        align_at: AlignAt::Latents,
        targets: &targets,
        weight: beta,
    }
    .run(model)
}

/// Trains `model` (re-initialized from the warm-up weights) to reproduce the
/// stored latents with the auxiliary images absent.
pub fn run_stage3(
    model: &mut Model,
    store: &TargetLatentStore,
    train: &[ToySample],
    cfg: &StageConfig,
    weights: &LossWeights,
) -> Result<TrainLog, SftError> {
    cfg.validate(true)?;
    weights.validate()?;
    let k = cfg.k_train;
    run_stage(
        model,
        train,
        cfg,
        "stage3",
        |_, _| Ok(None),
        |m, s| stage3_step(m, s, store, k, weights.beta_stage3),
    )
}
