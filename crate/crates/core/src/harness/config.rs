//! Run configuration as a flat `key=value` file over dotted field paths.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::forge::CurationConfig;
use crate::model::ModelConfig;
use crate::rl::RlConfig;
use crate::sft::{LossWeights, StageConfig};

use super::HarnessError;

/// Curation runs for the three disjoint splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Shared generation settings; `sample_count` and `seed` are per split.
    pub curation: CurationConfig,
    pub train_candidates: usize,
    pub rl_candidates: usize,
    pub eval_candidates: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            curation: CurationConfig::default(),
            train_candidates: 5000,
            rl_candidates: 600,
            eval_candidates: 600,
        }
    }
}

/// Split seeds are offset from the run seed so no two splits share a stream.
pub const RL_SEED_OFFSET: u64 = 1_000_003;
pub const EVAL_SEED_OFFSET: u64 = 2_000_003;

impl DataConfig {
    pub fn split(&self, seed: u64, split: Split) -> CurationConfig {
        let (count, offset) = match split {
            Split::Train => (self.train_candidates, 0),
            Split::Rl => (self.rl_candidates, RL_SEED_OFFSET),
            Split::Eval => (self.eval_candidates, EVAL_SEED_OFFSET),
        };
        CurationConfig {
            sample_count: count,
            seed: seed.wrapping_add(offset),
            ..self.curation.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Rl,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Rl, Split::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Rl => "rl",
            Split::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    /// Evaluate only the first `limit` eval samples.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_list: vec![0, 4, 8, 10, 12, 16],
            limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub stage3: StageConfig,
    pub weights: LossWeights,
    pub rl: RlConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            stage3: StageConfig::stage3(),
            weights: LossWeights::default(),
            rl: RlConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(scalar_text).collect();
            out.push((prefix.to_string(), parts.join(",")));
        }
        other => out.push((prefix.to_string(), scalar_text(other))),
    }
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_scalar(text: &str) -> Value {
    let t = text.trim();
    if t == "none" {
        return Value::Null;
    }
    serde_json::from_str::<Value>(t)
        .ok()
        .filter(|v| !v.is_object() && !v.is_array())
        .unwrap_or_else(|| Value::String(t.to_string()))
}

impl RunConfig {
    /// Every field as `(dotted.key, value)`, in a stable order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &v, &mut out);
        out
    }

    /// Sets one dotted key; the value is parsed against the existing field.
    pub fn set(&mut self, key: &str, text: &str) -> Result<(), HarnessError> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut node = &mut root;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m: &mut Map<String, Value>| m.get_mut(part))
                .ok_or_else(|| HarnessError::Config(format!("unknown key {key:?}")))?;
        }
        *node = if node.is_array() {
            Value::Array(
                text.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(parse_scalar)
                    .collect(),
            )
        } else if node.is_object() {
            return Err(HarnessError::Config(format!("{key:?} is a section, not a field")));
        } else if node.is_string() {
            Value::String(text.trim().to_string())
        } else {
            parse_scalar(text)
        };
        *self = serde_json::from_value(root)
            .map_err(|e| HarnessError::Config(format!("{key}={text}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped, as
    /// are manifest bookkeeping keys.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if k.starts_with("manifest.") || k.starts_with("input.") {
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
