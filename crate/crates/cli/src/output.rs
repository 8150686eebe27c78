//! Artifact writing and the run manifest.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::commands::Artifact;
use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the artifacts and a manifest holding the resolved configuration and
/// their SHA-256 checksums. Returns the manifest path.
pub fn write(dir: &Path, cfg: &RunConfig, artifacts: &[Artifact]) -> Result<PathBuf, CliError> {
    let io = |what: &Path, e: std::io::Error| CliError::Config(format!("cannot write {}: {e}", what.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut manifest = cfg.clone();
    manifest.artifacts.clear();
    for a in artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(|e| io(&path, e))?;
        manifest.artifacts.insert(a.name.clone(), sha256_hex(&a.bytes));
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest.to_toml()).map_err(|e| io(&path, e))?;
    Ok(path)
}
