//! Latent visual reasoning on a miniature multimodal transformer.

pub mod autodiff;
pub mod optim;
mod par;
pub mod model;
pub mod forge;
pub mod sft;
pub mod rl;
pub mod harness;
