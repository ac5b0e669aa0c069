use rand::Rng;

use crate::forge::render::prompt_layout;
use crate::forge::ToySample;
use crate::model::{decode_with_latents, DecodeConfig, Decoded, Model, TokenId};

use super::advantage::compute_advantages;
use super::config::RlConfig;
use super::reward::{compute_reward, is_correct};
use super::RlError;

/// `G` sampled responses to one prompt with their outcome rewards.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub sample_id: u64,
    pub gold: TokenId,
    pub rollouts: Vec<Decoded>,
    pub rewards: Vec<f64>,
    pub correct: Vec<bool>,
    /// `None` when the rewards have zero spread; such groups are not trained on.
    pub advantages: Option<Vec<f64>>,
}

impl RolloutGroup {
    pub fn accuracy(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len() as f64
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Samples `group_size` responses from the frozen `old` policy. Text steps
/// record their log-probability at the rollout temperature; latent steps record
/// the emitted vector.
pub fn rollout_group<R: Rng>(
    sample: &ToySample,
    old: &Model,
    config: &RlConfig,
    rng: &mut R,
) -> Result<RolloutGroup, RlError> {
    let prompt = prompt_layout(sample);
    let decode = DecodeConfig {
        latent_count: config.latent_count,
        temperature: config.temperature,
        max_new: config.max_response_length,
    };
    let rollouts = (0..config.group_size)
        .map(|_| decode_with_latents(old, &prompt, &decode, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let rewards: Vec<f64> = rollouts.iter().map(|d| compute_reward(&d.trajectory, sample.answer)).collect();
    let correct = rollouts.iter().map(|d| is_correct(&d.trajectory, sample.answer)).collect();
    let advantages = compute_advantages(&rewards);
    Ok(RolloutGroup {
        sample_id: sample.id,
        gold: sample.answer,
        rollouts,
        rewards,
        correct,
        advantages,
    })
}
