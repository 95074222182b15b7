//! Provenance manifests. Every output directory carries a `manifest.json` naming the
//! manifests it was built from, the hashes of its deterministic files, and its own id.
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{read_json, to_json};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Artifact type: dataset, value, policy, simulation, evaluation, consistency, report.
    pub kind: String,
    pub tool_version: String,
    pub experiment: String,
    /// Hash of the problem description the artifact belongs to.
    pub problem_hash: String,
    pub seed: u64,
    /// Effective configuration of the producing command.
    pub config: serde_json::Value,
    /// Upstream manifest ids by role.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each deterministic output file.
    pub files: BTreeMap<String, String>,
    /// Files containing wall-clock measurements; not hashed.
    pub timing_files: Vec<String>,
    /// Command-specific metadata (metrics, estimates, training summaries).
    pub meta: serde_json::Value,
    /// SHA-256 of this manifest with `id` empty.
    pub id: String,
}

impl Manifest {
    pub fn new(kind: &str, experiment: &str, problem_hash: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            experiment: experiment.into(),
            problem_hash: problem_hash.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            files: BTreeMap::new(),
            timing_files: Vec::new(),
            meta: serde_json::Value::Null,
            id: String::new(),
        }
    }

    fn compute_id(&self) -> Result<String> {
        let mut m = self.clone();
        m.id.clear();
        // Through `Value` so that non-finite numbers hash as the `null` they are stored as.
        Ok(sha256_hex(serde_json::to_string(&serde_json::to_value(&m)?)?.as_bytes()))
    }

    pub fn verify_id(&self) -> Result<()> {
        if self.compute_id()? != self.id {
            bail!("{} manifest id does not match its content", self.kind);
        }
        Ok(())
    }
}

/// Collects output files of one command and writes them together with the manifest.
#[derive(Debug)]
pub struct OutputDir<'a> {
    dir: &'a Path,
    pub manifest: Manifest,
}

impl<'a> OutputDir<'a> {
    pub fn create(dir: &'a Path, manifest: Manifest) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, manifest })
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<()> {
        fs::write(self.dir.join(name), content).with_context(|| format!("writing {name}"))?;
        self.manifest.files.insert(name.into(), sha256_hex(content.as_bytes()));
        Ok(())
    }

    pub fn write_timing(&mut self, name: &str, content: &str) -> Result<()> {
        fs::write(self.dir.join(name), content).with_context(|| format!("writing {name}"))?;
        self.manifest.timing_files.push(name.into());
        Ok(())
    }

    pub fn finish(mut self) -> Result<Manifest> {
        self.manifest.id = self.manifest.compute_id()?;
        fs::write(self.dir.join(MANIFEST), to_json(&self.manifest)?)?;
        Ok(self.manifest)
    }
}

/// Loads and checks the manifest of an artifact directory, including its file hashes.
pub fn load(dir: &Path, kind: &str) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        bail!("missing input {}", path.display());
    }
    let m: Manifest = read_json(&path)?;
    if m.kind != kind {
        bail!("{} holds a {} artifact, expected {kind}", dir.display(), m.kind);
    }
    m.verify_id().with_context(|| dir.display().to_string())?;
    for (name, hash) in &m.files {
        let bytes = fs::read(dir.join(name)).with_context(|| format!("missing input {}", dir.join(name).display()))?;
        if &sha256_hex(&bytes) != hash {
            bail!("{} was modified after its manifest was written", dir.join(name).display());
        }
    }
    Ok(m)
}
