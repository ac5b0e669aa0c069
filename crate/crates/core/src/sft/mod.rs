//! Three-stage supervised fine-tuning: warm-up, observation-aligned latent
//! generation under a teacher, and latent alignment without auxiliary images.

pub mod config;
pub mod diagnostic;
pub mod losses;
pub mod stage1;
pub mod stage2;
pub mod stage3;
pub mod store;
mod trainer;

pub use config::{LossWeights, StageConfig};
pub use diagnostic::{measure_obs_accuracy, ObsAccuracy};
pub use losses::{align_latent_loss, align_obs_loss, cosine_alignment, label_mask, latent_only_surrogate, ntp_loss};
pub use stage1::run_stage1;
pub use stage1::stage1_step;
pub use stage2::{emit_targets, run_stage2, stage2_step, teacher_targets, Stage2Output};
pub use stage3::{run_stage3, stage3_step};
pub use store::TargetLatentStore;
pub use trainer::{AlignAt, LogRow, StepLosses, SurrogateStep, TrainLog};

use thiserror::Error;

use crate::autodiff::GraphError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum SftError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid stage configuration: {0}")]
    Config(String),
    #[error("no supervised positions in sequence")]
    EmptyLabelMask,
    #[error("alignment shape mismatch: {0}")]
    AlignmentShape(String),
    #[error("expected {expected} latent slots, got {got}")]
    SlotMismatch { expected: usize, got: usize },
    #[error("no target latents stored for sample {0}")]
    MissingTarget(u64),
    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("target latent store: {0}")]
    Store(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
