//! Miniature multimodal decoder: vocabulary, layouts, masks, forward, decoding.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod layout;
pub mod mask;
pub mod transformer;
pub mod vocab;

pub use checkpoint::{CheckpointMeta, StageLabel};
pub use config::ModelConfig;
pub use decode::{decode_with_latents, sample_token, DecodeConfig, Decoded, Step, Trajectory};
pub use layout::{Content, PatchGrid, Segment, SegmentRole, SequenceLayout};
pub use mask::{AttentionMaskSpec, MaskMode};
pub use transformer::{Bound, ForwardOutput, HiddenStateStack, LatentFill, Model, Session};
pub use vocab::TokenId;

use thiserror::Error;

use crate::autodiff::GraphError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("unknown token id {0}")]
    UnknownToken(usize),
    #[error("patch grid mismatch: expected {expected}, got {got}")]
    PatchMismatch { expected: usize, got: usize },
    #[error("mask covers {mask} positions but layout has {layout}")]
    MaskLength { mask: usize, layout: usize },
    #[error("auxiliary image segment {segment} is not followed by a latent segment")]
    AuxWithoutLatent { segment: usize },
    #[error("expected {expected} latent vectors, got {got}")]
    LatentCount { expected: usize, got: usize },
    #[error("no latent input available at position {position}")]
    MissingLatent { position: usize },
    #[error("sequence length {len} exceeds max positions {max}")]
    TooLong { len: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
