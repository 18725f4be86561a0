//! Per-directory record of what ran, with SHA-256 of every input and output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::jobs::Job;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Fully resolved job; replaying it reproduces `outputs`.
    pub job: Job,
    /// Absolute paths.
    pub inputs: Vec<FileHash>,
    /// Relative to the run directory.
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            let abs = fs::canonicalize(p).with_context(|| format!("input {} not found", p.display()))?;
            Ok(FileHash { sha256: sha256_file(&abs)?, path: abs })
        })
        .collect()
}

pub fn hash_outputs(dir: &Path, names: &[String]) -> Result<Vec<FileHash>> {
    names.iter().map(|n| Ok(FileHash { path: n.into(), sha256: sha256_file(&dir.join(n))? })).collect()
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("run dir {}: missing {FILE}", dir.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn check_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let now = sha256_file(&f.path)?;
            if now != f.sha256 {
                bail!("input {} changed since the run (sha256 {now}, recorded {})", f.path.display(), f.sha256);
            }
        }
        Ok(())
    }

    /// Names of outputs whose hashes differ from `other`.
    pub fn output_mismatches(&self, other: &Manifest) -> Vec<String> {
        let mut bad = Vec::new();
        for f in &self.outputs {
            match other.outputs.iter().find(|g| g.path == f.path) {
                Some(g) if g.sha256 == f.sha256 => {}
                _ => bad.push(f.path.display().to_string()),
            }
        }
        for g in &other.outputs {
            if !self.outputs.iter().any(|f| f.path == g.path) {
                bad.push(g.path.display().to_string());
            }
        }
        bad
    }
}
