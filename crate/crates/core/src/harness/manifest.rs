//! Staged output directories and the run manifest.
//!
//! Artifacts are written under `<out>/.partial` and moved into place only
//! when the run finishes; a dropped, uncommitted [`OutputDir`] removes the
//! staging area so failed runs leave no half-written files behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{to_json, ExperimentConfig, HarnessError, StageExt};
use crate::seed::sha256_hex;

const STAGING: &str = ".partial";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to tell whether two runs are the same run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub inputs: Vec<ArtifactEntry>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).stage("manifest")?;
        serde_json::from_str(&text).stage("manifest")
    }
}

pub fn sha256_file(path: &Path) -> Result<String, HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::new("hash", format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Digest of the config with the output location left out, so the same run
/// written to two places gets the same manifest.
pub fn config_digest(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.out_dir = None;
    sha256_hex(c.to_json().as_bytes())
}

/// Collects artifacts for one run. With no root, artifacts are only hashed.
#[derive(Debug)]
pub struct OutputDir {
    root: Option<PathBuf>,
    artifacts: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    committed: bool,
}

impl OutputDir {
    pub fn new(root: Option<&Path>) -> Result<Self, HarnessError> {
        if let Some(r) = root {
            let staging = r.join(STAGING);
            if staging.exists() {
                fs::remove_dir_all(&staging).stage("output")?;
            }
            fs::create_dir_all(&staging).stage("output")?;
        }
        Ok(Self { root: root.map(Path::to_path_buf), artifacts: BTreeMap::new(), inputs: BTreeMap::new(), committed: false })
    }

    /// In-memory only; nothing touches the filesystem.
    pub fn discard() -> Self {
        Self { root: None, artifacts: BTreeMap::new(), inputs: BTreeMap::new(), committed: false }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Stages `bytes` at the relative path `rel`.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        if let Some(r) = &self.root {
            let path = r.join(STAGING).join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).stage("write")?;
            }
            fs::write(&path, bytes).map_err(|e| HarnessError::new("write", format!("{}: {e}", path.display())))?;
        }
        self.artifacts.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records an input file's content hash for the manifest.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<(), HarnessError> {
        let hash = sha256_file(path)?;
        self.inputs.insert(format!("{label}:{}", path.display()), hash);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), HarnessError> {
        let bytes = to_json(value)?;
        self.write(rel, &bytes)
    }

    pub fn artifacts(&self) -> Vec<ArtifactEntry> {
        self.artifacts.iter().map(|(p, h)| ArtifactEntry { path: p.clone(), sha256: h.clone() }).collect()
    }

    /// Writes the manifest and moves every staged file into place.
    pub fn commit(mut self, command: &str, config: &ExperimentConfig) -> Result<Manifest, HarnessError> {
        for (lang, path) in &config.corpora {
            self.input(lang, path)?;
        }
        let inputs = self.inputs.iter().map(|(p, h)| ArtifactEntry { path: p.clone(), sha256: h.clone() }).collect();
        let manifest = Manifest {
            tool: "mdr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.to_string(),
            config_sha256: config_digest(config),
            seeds: config.seeds.clone(),
            split_seed: config.split_seed,
            inputs,
            artifacts: self.artifacts(),
        };
        if let Some(root) = self.root.clone() {
            let staging = root.join(STAGING);
            fs::write(staging.join(MANIFEST_FILE), to_json(&manifest)?).stage("manifest")?;
            let mut rels: Vec<String> = self.artifacts.keys().cloned().collect();
            rels.push(MANIFEST_FILE.to_string());
            for rel in rels {
                let dst = root.join(&rel);
                if let Some(parent) = dst.parent() {
                    fs::create_dir_all(parent).stage("commit")?;
                }
                fs::rename(staging.join(&rel), &dst).stage("commit")?;
            }
            fs::remove_dir_all(&staging).stage("commit")?;
        }
        self.committed = true;
        Ok(manifest)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            if let Some(r) = &self.root {
                let _ = fs::remove_dir_all(r.join(STAGING));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_run_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut out = OutputDir::new(Some(dir.path())).unwrap();
            out.write("a/b.txt", b"x").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_moves_files_and_lists_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::new(Some(dir.path())).unwrap();
        out.write("z.txt", b"z").unwrap();
        out.write("a/b.txt", b"x").unwrap();
        let cfg = ExperimentConfig::default();
        let m = out.commit("test", &cfg).unwrap();
        assert_eq!(fs::read(dir.path().join("a/b.txt")).unwrap(), b"x");
        assert!(!dir.path().join(STAGING).exists());
        assert_eq!(m.artifacts[0].path, "a/b.txt");
        assert_eq!(m.artifacts[0].sha256, sha256_hex(b"x"));
        assert_eq!(Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
    }
}
