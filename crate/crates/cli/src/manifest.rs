//! Run manifests written next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliResult;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    /// SHA-256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timestamp: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<out>.<suffix>`, keeping the original extension in the name.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

/// Hashes `inputs` and `outputs` and writes `<primary>.manifest.json`.
pub fn write(
    primary: &Path,
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> CliResult<PathBuf> {
    let digests = |paths: &[&Path]| -> CliResult<BTreeMap<String, String>> {
        paths
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect()
    };
    let manifest = RunManifest {
        command_line: std::env::args().collect(),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let path = sidecar(primary, "manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::invalid(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
