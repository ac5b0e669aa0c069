use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::optim::AdamWConfig;

use super::RlError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    /// Ratio terms on text steps only.
    Grpo,
    /// Text terms plus Gaussian-ratio terms on latent steps.
    Vlpo,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Grpo => "grpo",
            Algo::Vlpo => "vlpo",
        })
    }
}

impl FromStr for Algo {
    type Err = RlError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grpo" => Ok(Algo::Grpo),
            "vlpo" => Ok(Algo::Vlpo),
            other => Err(RlError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    /// Weight of the text-step KL estimate against the reference policy.
    pub kl_coeff: f64,
    /// Scale of the latent Gaussian.
    pub sigma: f64,
    pub temperature: f64,
    pub max_response_length: usize,
    /// Groups are kept while `0 < accuracy < accuracy_threshold`.
    pub accuracy_threshold: f64,
    pub optimizer: AdamWConfig,
    /// Latent slots per latent segment during rollouts.
    pub latent_count: usize,
    pub prompts_per_batch: usize,
    /// Optimizer steps on each rollout batch before refreshing the old policy.
    pub updates_per_batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coeff: 0.0,
            sigma: 10.0,
            temperature: 0.5,
            max_response_length: 96,
            accuracy_threshold: 0.6,
            optimizer: AdamWConfig {
                lr: 1e-4,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            latent_count: 10,
            prompts_per_batch: 8,
            updates_per_batch: 4,
            epochs: 1,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.into()));
        if self.group_size < 2 {
            return bad("group size must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip epsilon must lie in (0, 1)");
        }
        if !(self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if !(self.accuracy_threshold > 0.0 && self.accuracy_threshold <= 1.0) {
            return bad("accuracy threshold must lie in (0, 1]");
        }
        if self.prompts_per_batch == 0 || self.updates_per_batch == 0 {
            return bad("batch and update counts must be positive");
        }
        if self.temperature < 0.0 || self.kl_coeff < 0.0 {
            return bad("temperature and kl coefficient must be non-negative");
        }
        Ok(())
    }
}
