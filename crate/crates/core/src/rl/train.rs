use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::forge::ToySample;
use crate::model::Model;
use crate::optim::AdamW;
use crate::par::par_map;

use super::advantage::filter_by_accuracy;
use super::config::{Algo, RlConfig};
use super::objective::policy_objective;
use super::rollout::{rollout_group, RolloutGroup};
use super::RlError;

/// One optimizer update.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RlLogRow {
    pub step: usize,
    pub batch: usize,
    pub update: usize,
    /// Mean reward over every rollout of the batch.
    pub mean_reward: f64,
    pub retained_fraction: f64,
    pub loss: f64,
    pub text_ratio_mean: Option<f64>,
    pub text_ratio_min: Option<f64>,
    pub text_ratio_max: Option<f64>,
    pub latent_ratio_mean: Option<f64>,
    pub latent_ratio_min: Option<f64>,
    pub grad_norm: f64,
    /// Norm of the gradient contributed by latent-step ratio terms.
    pub latent_grad_norm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct RlOutcome {
    pub log: Vec<RlLogRow>,
}

impl RlOutcome {
    /// Per-batch mean rewards in order.
    pub fn batch_rewards(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut last = None;
        for r in &self.log {
            if last != Some(r.batch) {
                out.push(r.mean_reward);
                last = Some(r.batch);
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), RlError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.log {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn rng_for(seed: u64, batch: usize, prompt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (batch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(prompt as u64);
    rng
}

/// Rollout, filter, and `updates_per_batch` clipped updates per batch of
/// prompts. The old policy is refreshed at every batch; the reference policy
/// is the starting model.
pub fn train_rl(model: &mut Model, prompts: &[ToySample], config: &RlConfig, algo: Algo) -> Result<RlOutcome, RlError> {
    config.validate()?;
    if !(config.temperature > 0.0) {
        return Err(RlError::Config("training needs a positive rollout temperature".into()));
    }
    let reference = (config.kl_coeff > 0.0).then(|| model.clone());
    let mut opt = AdamW::new(config.optimizer.clone());
    let mut outcome = RlOutcome::default();
    let mut order: Vec<usize> = (0..prompts.len()).collect();
    let mut step = 0;
    let mut batch_index = 0;
    let mut empty_batches = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64)));
        for chunk in order.chunks(config.prompts_per_batch) {
            let old = model.clone();
            let indexed: Vec<(usize, &ToySample)> = chunk.iter().map(|&i| &prompts[i]).enumerate().collect();
            let groups = par_map(&indexed, |&(j, s)| {
                rollout_group(s, &old, config, &mut rng_for(config.seed, batch_index, j))
            })
            .into_iter()
            .collect::<Result<Vec<RolloutGroup>, _>>()?;
            let mean_reward =
                groups.iter().map(RolloutGroup::mean_reward).sum::<f64>() / groups.len() as f64;
            let tallies: Vec<(usize, usize)> = groups
                .iter()
                .map(|g| (g.correct.iter().filter(|&&c| c).count(), g.correct.len()))
                .collect();
            let keep = filter_by_accuracy(&tallies, config.accuracy_threshold);
            let retained: Vec<RolloutGroup> = keep.iter().map(|&i| groups[i].clone()).collect();
            let retained_fraction = retained.len() as f64 / groups.len() as f64;
            empty_batches += retained.is_empty() as usize;
            for update in 0..config.updates_per_batch {
                let obj = policy_objective(&retained, model, reference.as_ref(), config, algo)?;
                if !obj.loss.is_finite() || !obj.grads.is_finite() {
                    return Err(RlError::Diverged { step });
                }
                let grad_norm = if obj.grads.is_empty() {
                    0.0
                } else {
                    opt.step(model.params_mut(), &obj.grads)
                };
                outcome.log.push(RlLogRow {
                    step,
                    batch: batch_index,
                    update,
                    mean_reward,
                    retained_fraction,
                    loss: obj.loss,
                    text_ratio_mean: obj.ratios.text_mean(),
                    text_ratio_min: (obj.ratios.text_count > 0).then_some(obj.ratios.text_min),
                    text_ratio_max: (obj.ratios.text_count > 0).then_some(obj.ratios.text_max),
                    latent_ratio_mean: obj.ratios.latent_mean(),
                    latent_ratio_min: (obj.ratios.latent_count > 0).then_some(obj.ratios.latent_min),
                    grad_norm,
                    latent_grad_norm: obj.latent_grads.norm(),
                });
                step += 1;
            }
            log::debug!(
                "{algo} batch {batch_index}: reward {mean_reward:.3}, retained {}/{}",
                retained.len(),
                groups.len()
            );
            batch_index += 1;
        }
    }
    if empty_batches > 0 {
        log::warn!("{empty_batches} of {batch_index} rollout batches had no retained groups and were skipped");
    }
    Ok(outcome)
}
