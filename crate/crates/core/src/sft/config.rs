use serde::{Deserialize, Serialize};

use crate::optim::AdamWConfig;

/// Weights of the alignment terms in the stage-2 and stage-3 totals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta_stage3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta_stage3: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), super::SftError> {
        if self.alpha < 0.0 || self.beta_stage3 < 0.0 || !self.alpha.is_finite() || !self.beta_stage3.is_finite() {
            return Err(super::SftError::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    /// Stops early once this many optimizer steps were taken.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub accumulation: usize,
    /// Latent slots per latent segment during training.
    pub k_train: usize,
    pub seed: u64,
    /// Optimizer steps between diagnostic evaluations; 0 disables them.
    pub eval_interval: usize,
    /// Samples used for each diagnostic evaluation.
    pub eval_samples: usize,
}

impl Default for StageConfig {
    /// Toy-scale defaults; see [`StageConfig::reference`] for the large-model recipe.
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.01,
                ..AdamWConfig::default()
            },
            epochs: 3,
            max_steps: None,
            batch_size: 8,
            accumulation: 1,
            k_train: 8,
            seed: 0,
            eval_interval: 50,
            eval_samples: 200,
        }
    }
}

impl StageConfig {
    /// Recipe used for a 7B-parameter model: learning rate 1e-5, weight decay
    /// 0.01, accumulation 16. Too slow to move a randomly initialized toy model.
    pub fn reference(stage: u8) -> Self {
        Self {
            optimizer: AdamWConfig {
                lr: 1e-5,
                weight_decay: 0.01,
                ..AdamWConfig::default()
            },
            epochs: if stage == 1 { 3 } else { 1 },
            accumulation: 16,
            batch_size: 1,
            ..Self::default()
        }
    }

    pub fn stage1() -> Self {
        Self::default()
    }

    pub fn stage2() -> Self {
        Self {
            epochs: 1,
            ..Self::default()
        }
    }

    pub fn stage3() -> Self {
        Self {
            epochs: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self, needs_latents: bool) -> Result<(), super::SftError> {
        if self.batch_size == 0 || self.accumulation == 0 {
            return Err(super::SftError::Config("batch size and accumulation must be positive".into()));
        }
        if needs_latents && self.k_train == 0 {
            return Err(super::SftError::Config("k_train must be at least 1 for stages 2 and 3".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(super::SftError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}
