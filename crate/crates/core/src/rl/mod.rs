//! Group-relative policy optimization over rollouts with latent steps.

pub mod advantage;
pub mod config;
pub mod objective;
pub mod reward;
pub mod rollout;
pub mod train;

pub use advantage::{compute_advantages, filter_by_accuracy};
pub use config::{Algo, RlConfig};
pub use objective::{policy_objective, text_ratio, vlpo_latent_ratio, ObjectiveOutput, RatioStats};
pub use reward::{compute_reward, FORMAT_BONUS};
pub use rollout::{rollout_group, RolloutGroup};
pub use train::{train_rl, RlLogRow, RlOutcome};

use thiserror::Error;

use crate::autodiff::GraphError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid RL configuration: {0}")]
    Config(String),
    #[error("step {step} is not a {expected} step")]
    WrongStepKind { step: usize, expected: &'static str },
    #[error("latent dimension mismatch: {old} vs {current}")]
    Dimension { old: usize, current: usize },
    #[error("non-finite objective at update {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
