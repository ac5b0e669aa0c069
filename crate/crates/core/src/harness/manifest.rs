//! Per-command run manifests: full configuration plus content hashes of inputs.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::HarnessError;

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Writes `manifests/<command>.manifest` under `run_dir`. The file loads back
/// as a config: bookkeeping keys are ignored by [`RunConfig::apply_text`].
pub fn write_manifest(
    run_dir: &Path,
    command: &str,
    args: &[String],
    config: &RunConfig,
    inputs: &[&Path],
) -> Result<(), HarnessError> {
    let dir = run_dir.join("manifests");
    fs::create_dir_all(&dir)?;
    let mut text = format!("manifest.command={command}\nmanifest.args={}\n", args.join(" "));
    for p in inputs {
        if p.exists() {
            let rel = p.strip_prefix(run_dir).unwrap_or(p);
            text.push_str(&format!("input.{}={}\n", rel.display(), sha256_file(p)?));
        }
    }
    text.push_str(&config.to_text());
    fs::write(dir.join(format!("{command}.manifest")), text)?;
    Ok(())
}
