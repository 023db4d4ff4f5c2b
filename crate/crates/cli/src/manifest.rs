use std::collections::BTreeMap;
use std::path::Path;

use epidistill::config::Seeds;
use epidistill::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// What produced the files in a run directory. Contains no timestamps so
/// that identical invocations leave identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_path: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub stages: BTreeMap<String, Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// Command-line overrides applied on top of the config file.
    pub overrides: Vec<String>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Records `stage` in the run directory's manifest. An existing manifest
/// written for a different config or different seeds is replaced.
pub fn record(
    run_dir: &Path,
    config_path: &Path,
    config_sha256: &str,
    seeds: Seeds,
    stage: &str,
    entry: Stage,
) -> Result<()> {
    let path = run_dir.join(MANIFEST_FILE);
    let existing = std::fs::read(&path)
        .ok()
        .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok());
    let mut manifest = match existing {
        Some(m) if m.config_sha256 == config_sha256 && m.seeds == seeds => m,
        Some(_) => {
            log::warn!(
                "{}: config or seeds changed, starting a new manifest",
                path.display()
            );
            fresh(config_path, config_sha256, seeds)
        }
        None => fresh(config_path, config_sha256, seeds),
    };
    manifest.stages.insert(stage.to_string(), entry);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn fresh(config_path: &Path, config_sha256: &str, seeds: Seeds) -> Manifest {
    Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: config_path.display().to_string(),
        config_sha256: config_sha256.to_string(),
        seeds,
        stages: BTreeMap::new(),
    }
}
