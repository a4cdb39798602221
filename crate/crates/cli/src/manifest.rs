//! Atomic artifact writing with reproducibility manifests.
//!
//! Every artifact `<name>` gets a sibling `<name>.manifest.json` recording
//! the tool version, the effective-config digest, the seed, and the sha256
//! of each logical input. Manifests carry no timestamps, so a rerun over
//! identical inputs is byte-identical. Writes go to a temp file in the same
//! directory and are renamed into place, never interleaved.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::StageError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact: String,
    pub stage: String,
    pub tool_version: String,
    pub config_digest: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config_digest: &str, seed: u64) -> Self {
        Self {
            artifact: String::new(),
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: config_digest.to_string(),
            seed,
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> Result<Self, StageError> {
        self.inputs.insert(name.to_string(), sha256_file(path)?);
        Ok(self)
    }
}

pub fn sha256_file(path: &Path) -> Result<String, StageError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| StageError::MissingPrerequisite(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| StageError::Internal(format!("bad artifact path {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Write an artifact plus its manifest, both atomically.
pub fn write_artifact(path: &Path, bytes: &[u8], manifest: Manifest) -> Result<(), StageError> {
    write_atomic(path, bytes)?;
    let mut manifest = manifest;
    manifest.artifact = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest_path = path.with_file_name(format!("{}.manifest.json", manifest.artifact));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_atomic(&manifest_path, text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("artifact.json");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert!(!path.with_file_name("artifact.json.tmp").exists());
    }

    #[test]
    fn manifest_lands_next_to_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        let manifest = Manifest::new("sample", "cfg", 7);
        write_artifact(&path, b"{}", manifest).unwrap();
        let manifest_path = dir.path().join("plan.json.manifest.json");
        let read: Manifest =
            serde_json::from_str(&std::fs::read_to_string(manifest_path).unwrap()).unwrap();
        assert_eq!(read.artifact, "plan.json");
        assert_eq!(read.stage, "sample");
        assert_eq!(read.seed, 7);
    }

    #[test]
    fn file_digest_matches_direct_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data");
        std::fs::write(&path, b"payload").unwrap();
        let direct = hex(&Sha256::digest(b"payload"));
        assert_eq!(sha256_file(&path).unwrap(), direct);
    }
}
