//! Command-line entry points, run plumbing, evaluation and reports.

pub mod cli;
pub mod config;
pub mod evaluate;
pub mod gradcheck;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use cli::dispatch;
pub use config::RunConfig;
pub use evaluate::{evaluate, MetricsRow};
pub use gradcheck::{run_gradcheck, GradCheckConfig, NamedReport};
pub use pipeline::RunDir;
pub use report::emit_report;

use thiserror::Error;

use crate::forge::ForgeError;
use crate::model::ModelError;
use crate::rl::RlError;
use crate::sft::SftError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Sft(#[from] SftError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("gradient check failed")]
    GradCheckFailed,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
