//! Latent generation supervised by observation alignment with a frozen teacher.

use std::collections::HashMap;

use crate::autodiff::{GradMap, Graph, Tensor};
use crate::forge::render::{student_layout, teacher_layout};
use crate::forge::ToySample;
use crate::model::{AttentionMaskSpec, LatentFill, MaskMode, Model, SegmentRole};

use super::config::{LossWeights, StageConfig};
use super::store::TargetLatentStore;
use crate::par::par_map;
use super::trainer::{run_stage, AlignAt, StepLosses, SurrogateStep, TrainLog};
use super::SftError;

/// Teacher hidden states at the observation positions, one `n_obs × hidden`
/// tensor per layer `1..=L`.
pub fn teacher_targets(teacher: &Model, sample: &ToySample) -> Result<Vec<Tensor>, SftError> {
    let layout = teacher_layout(sample);
    let mask = AttentionMaskSpec::causal(layout.len());
    let mut g = Graph::new();
    let bound = teacher.bind(&mut g, false);
    let out = teacher.forward(&mut g, &bound, &layout, &mask, LatentFill::Given(&[]))?;
    let obs = layout.positions_with_role(SegmentRole::ObservationText);
    let mut targets = Vec::with_capacity(out.hidden.len() - 1);
    for &h in &out.hidden[1..] {
        let sel = g.select_rows(h, &obs)?;
        targets.push(g.value(sel).clone());
    }
    Ok(targets)
}

/// Stage-2 gradient for one sample: NTP plus `alpha` times the latent-only
/// observation-alignment surrogate.
pub fn stage2_step(
    model: &Model,
    sample: &ToySample,
    targets: &[Tensor],
    k: usize,
    alpha: f64,
) -> Result<(GradMap, StepLosses), SftError> {
    let layout = student_layout(sample, k);
    let mask = AttentionMaskSpec::build(&layout, MaskMode::MonetStage2)?;
    SurrogateStep {
        layout: &layout,
        mask: &mask,
        align_at: AlignAt::Observations,
        targets,
        weight: alpha,
    }
    .run(model)
}

#[derive(Clone, Debug)]
pub struct Stage2Output {
    pub log: TrainLog,
    pub store: TargetLatentStore,
}

/// Final-model latent states (layers `1..=L`) at every latent slot of the
/// stage-2 layout, per sample.
pub fn emit_targets(model: &Model, samples: &[ToySample], k: usize) -> Result<TargetLatentStore, SftError> {
    let cfg = model.config();
    let mut store = TargetLatentStore::new(cfg.layers, cfg.hidden);
    let refs: Vec<&ToySample> = samples.iter().collect();
    let stacks = par_map(&refs, |s| -> Result<_, SftError> {
        let layout = student_layout(s, k);
        let mask = AttentionMaskSpec::build(&layout, MaskMode::MonetStage2)?;
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let out = model.forward(&mut g, &bound, &layout, &mask, LatentFill::Autoregressive)?;
        Ok((out.stack(&g), out.latent_positions))
    });
    for (s, r) in samples.iter().zip(stacks) {
        let (stack, positions) = r?;
        store.insert_from_stack(s.id, &stack, &positions)?;
    }
    Ok(store)
}

/// Trains `model` (initialized from the warm-up weights) against the frozen
/// `teacher`, then records its latents as stage-3 targets.
pub fn run_stage2(
    model: &mut Model,
    teacher: &Model,
    train: &[ToySample],
    cfg: &StageConfig,
    weights: &LossWeights,
) -> Result<Stage2Output, SftError> {
    cfg.validate(true)?;
    weights.validate()?;
    let refs: Vec<&ToySample> = train.iter().collect();
    let computed = par_map(&refs, |s| teacher_targets(teacher, s));
    let mut targets = HashMap::with_capacity(train.len());
    for (s, t) in train.iter().zip(computed) {
        targets.insert(s.id, t?);
    }
    let k = cfg.k_train;
    let log = run_stage(
        model,
        train,
        cfg,
        "stage2",
        |_, _| Ok(None),
        |m, s| stage2_step(m, s, &targets[&s.id], k, weights.alpha),
    )?;
    let store = emit_targets(model, train, k)?;
    Ok(Stage2Output { log, store })
}
