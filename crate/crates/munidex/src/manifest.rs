//! Per-run reproducibility record written next to every artifact set.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Command-line arguments after the program name.
    pub args: Vec<String>,
    /// Configuration file text as read, when one was given.
    pub config_text: Option<String>,
    /// Effective configuration after defaults.
    pub config: serde_json::Value,
    /// SHA-256 of every consumed file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of manifests found beside consumed files, keyed by their path.
    pub upstream: BTreeMap<String, String>,
    /// SHA-256 of every artifact written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
    pub runtime_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Collects input digests and the manifests of the stages that produced them.
#[derive(Debug, Default)]
pub struct InputLog {
    inputs: BTreeMap<String, String>,
    upstream: BTreeMap<String, String>,
}

impl InputLog {
    pub fn record(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        let sibling = path.parent().map(|d| d.join(MANIFEST_FILE));
        if let Some(m) = sibling.filter(|m| m.is_file()) {
            self.upstream.insert(m.display().to_string(), sha256_file(&m)?);
        }
        Ok(())
    }

    pub fn into_parts(self) -> (BTreeMap<String, String>, BTreeMap<String, String>) {
        (self.inputs, self.upstream)
    }
}

/// Digests of `files` inside `dir`, keyed by file name.
pub fn output_digests(dir: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| {
            let name = f.strip_prefix(dir).unwrap_or(f).display().to_string();
            Ok((name, sha256_file(f)?))
        })
        .collect()
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
