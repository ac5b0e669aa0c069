//! Parameter snapshots: a `key=value` manifest plus a little-endian f64 blob.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::Tensor;

use super::config::ModelConfig;
use super::transformer::Model;
use super::ModelError;

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageLabel {
    Base,
    WarmUp,
    Stage2,
    Sft,
    Rl,
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageLabel::Base => "base",
            StageLabel::WarmUp => "warm-up",
            StageLabel::Stage2 => "stage2",
            StageLabel::Sft => "sft",
            StageLabel::Rl => "rl",
        })
    }
}

impl FromStr for StageLabel {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "base" => StageLabel::Base,
            "warm-up" => StageLabel::WarmUp,
            "stage2" => StageLabel::Stage2,
            "sft" => StageLabel::Sft,
            "rl" => StageLabel::Rl,
            other => return Err(ModelError::Checkpoint(format!("unknown stage label {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub stage: StageLabel,
    pub step: u64,
    pub seed: u64,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("manifest"), base.with_extension("bin"))
}

/// Writes `<base>.manifest` and `<base>.bin`.
pub fn save(model: &Model, meta: &CheckpointMeta, base: &Path) -> Result<(), ModelError> {
    let (manifest_path, blob_path) = paths(base);
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    let c = model.config();
    let ps = model.params();
    let mut m = String::new();
    let mut kv = |k: &str, v: String| {
        m.push_str(k);
        m.push('=');
        m.push_str(&v);
        m.push('\n');
    };
    kv("format_version", FORMAT_VERSION.to_string());
    kv("stage", meta.stage.to_string());
    kv("step", meta.step.to_string());
    kv("seed", meta.seed.to_string());
    kv("layers", c.layers.to_string());
    kv("hidden", c.hidden.to_string());
    kv("heads", c.heads.to_string());
    kv("mlp_hidden", c.mlp_hidden.to_string());
    kv("vocab_size", c.vocab_size.to_string());
    kv("max_positions", c.max_positions.to_string());
    kv("max_patches", c.max_patches.to_string());
    kv("patch_features", c.patch_features.to_string());
    kv("init_std", format!("{:?}", c.init_std));
    kv("param_count", ps.len().to_string());
    for id in ps.ids() {
        let shape: Vec<String> = ps.get(id).shape().iter().map(ToString::to_string).collect();
        kv(&format!("param.{}", id.0), format!("{}:{}", ps.name(id), shape.join("x")));
    }
    let mut blob = Vec::with_capacity(ps.numel() * 8);
    for id in ps.ids() {
        for v in ps.get(id).data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(manifest_path, m)?;
    fs::write(blob_path, blob)?;
    Ok(())
}

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Checkpoint(format!("manifest line {}: missing '='", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn field<T: FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T, ModelError> {
    m.get(key)
        .ok_or_else(|| ModelError::Checkpoint(format!("manifest lacks {key}")))?
        .parse()
        .map_err(|_| ModelError::Checkpoint(format!("manifest field {key} is malformed")))
}

pub fn load(base: &Path) -> Result<(Model, CheckpointMeta), ModelError> {
    let (manifest_path, blob_path) = paths(base);
    let m = parse_manifest(&fs::read_to_string(manifest_path)?)?;
    let version: u32 = field(&m, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {version}")));
    }
    let config = ModelConfig {
        layers: field(&m, "layers")?,
        hidden: field(&m, "hidden")?,
        heads: field(&m, "heads")?,
        mlp_hidden: field(&m, "mlp_hidden")?,
        vocab_size: field(&m, "vocab_size")?,
        max_positions: field(&m, "max_positions")?,
        max_patches: field(&m, "max_patches")?,
        patch_features: field(&m, "patch_features")?,
        init_std: field(&m, "init_std")?,
    };
    let meta = CheckpointMeta {
        stage: field::<String>(&m, "stage")?.parse()?,
        step: field(&m, "step")?,
        seed: field(&m, "seed")?,
    };
    let mut model = Model::zeroed(config)?;
    let count: usize = field(&m, "param_count")?;
    if count != model.params().len() {
        return Err(ModelError::Checkpoint(format!(
            "manifest lists {count} parameters, configuration implies {}",
            model.params().len()
        )));
    }
    let blob = fs::read(blob_path)?;
    if blob.len() != model.params().numel() * 8 {
        return Err(ModelError::Checkpoint(format!(
            "blob holds {} bytes, expected {}",
            blob.len(),
            model.params().numel() * 8
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    let mut offset = 0;
    for id in ids {
        let declared: String = field(&m, &format!("param.{}", id.0))?;
        let ps = model.params_mut();
        let expected_name = ps.name(id).to_string();
        if declared.split(':').next() != Some(expected_name.as_str()) {
            return Err(ModelError::Checkpoint(format!(
                "parameter {} is {declared}, expected {expected_name}",
                id.0
            )));
        }
        let t: &mut Tensor = ps.get_mut(id);
        for v in t.data_mut() {
            let bytes: [u8; 8] = blob[offset..offset + 8].try_into().expect("8 bytes");
            *v = f64::from_le_bytes(bytes);
            offset += 8;
        }
    }
    Ok((model, meta))
}
