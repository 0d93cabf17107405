//! Run directories: every command writes its outputs into a directory with
//! a config snapshot and a manifest.
//!
//! Rerunning into a directory that already holds a manifest is an error;
//! resuming means deleting the directory or choosing a new one. Silent
//! overwrites would make "which config produced this file" unanswerable.

use std::path::{Path, PathBuf};

use agnocomm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SNAPSHOT_FILE: &str = "config.snapshot.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Which command produced the directory (collect, pretrain, ...).
    pub stage: String,
    pub version: String,
    /// SHA-256 of the config snapshot, for provenance checks.
    pub config_sha256: String,
    pub created_unix: u64,
    /// Relative paths of everything the stage wrote, in write order.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("manifest parse: {e}")))
    }
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// An in-progress output directory. Dropped without `finish` it leaves no
/// manifest, so a crashed run is visibly incomplete and rerunnable.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    stage: &'static str,
    config_sha256: String,
    artifacts: Vec<String>,
}

impl RunDir {
    /// Creates the directory (parents included), refuses to reuse a
    /// completed one, and writes the config snapshot.
    pub fn create(root: &Path, stage: &'static str, snapshot: &str) -> Result<Self> {
        let manifest = root.join(MANIFEST_FILE);
        if manifest.exists() {
            return Err(Error::Config(format!(
                "{} already contains a completed run; pick a new directory or delete it",
                root.display()
            )));
        }
        std::fs::create_dir_all(root)
            .map_err(|e| Error::Config(format!("cannot create {}: {e}", root.display())))?;
        let dir = Self {
            root: root.to_path_buf(),
            stage,
            config_sha256: sha256_hex(snapshot),
            artifacts: Vec::new(),
        };
        dir.write_text(SNAPSHOT_FILE, snapshot)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for a relative artifact, creating parent dirs.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let full = self.root.join(rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Config(format!("cannot create {}: {e}", parent.display())))?;
        }
        Ok(full)
    }

    /// Records an artifact written by the caller through `path`.
    pub fn note(&mut self, rel: &str) {
        self.artifacts.push(rel.to_string());
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        let full = self.root.join(rel);
        std::fs::write(&full, text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", full.display())))
    }

    /// Seals the run by writing the manifest.
    pub fn finish(self) -> Result<()> {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = RunManifest {
            stage: self.stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.config_sha256.clone(),
            created_unix,
            artifacts: self.artifacts.clone(),
        };
        let text = toml::to_string_pretty(&manifest)
            .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
        self.write_text(MANIFEST_FILE, &text)
    }
}
