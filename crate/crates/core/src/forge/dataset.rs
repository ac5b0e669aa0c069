//! JSON-lines persistence of curated records.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::TokenId;

use super::curation::Verdict;
use super::tasks::{Family, ToySample};
use super::ForgeError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: Family,
    pub seed: u64,
    pub stream: u64,
    pub corrupted: bool,
    pub weak_answer: Option<TokenId>,
    pub strong_answer: Option<TokenId>,
    pub stage1: Verdict,
    pub stage2: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub schema_version: u32,
    pub sample: ToySample,
    pub provenance: Provenance,
}

pub fn to_jsonl(records: &[DatasetRecord]) -> Result<Vec<u8>, ForgeError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| ForgeError::Json { line: 0, source: e })?;
        out.write_all(b"\n")?;
    }
    Ok(out)
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<(), ForgeError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_jsonl(records)?)?;
    Ok(())
}

pub fn parse_jsonl(text: &str) -> Result<Vec<DatasetRecord>, ForgeError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(line).map_err(|e| ForgeError::Json { line: i + 1, source: e })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(ForgeError::Schema {
                line: i + 1,
                version: rec.schema_version,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, ForgeError> {
    parse_jsonl(&fs::read_to_string(path)?)
}
