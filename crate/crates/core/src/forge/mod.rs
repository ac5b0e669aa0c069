//! Synthetic grid tasks and the curation pipeline that turns them into training data.

pub mod curation;
pub mod dataset;
pub mod grid;
pub mod judges;
pub mod render;
pub mod tasks;

pub use curation::{curate, CurationConfig, CurationReport, Verdict};
pub use dataset::{read_dataset, write_dataset, DatasetRecord};
pub use grid::{BoundingBox, Grid};
pub use judges::{StrongJudge, WeakJudge};
pub use tasks::{boxed_answer, Family, ToySample};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("invalid task shape: {0}")]
    BadShape(String),
    #[error("sample {0}: overlapping observation spans")]
    OverlappingSpans(u64),
    #[error("sample {0}: observation span out of range")]
    SpanOutOfRange(u64),
    #[error("sample {0} is already tagged")]
    AlreadyTagged(u64),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: unsupported schema version {version}")]
    Schema { line: usize, version: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
