//! Run manifests and the output directory they describe.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::error::{Error, Result};

/// Everything needed to repeat a run and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: SeedRecord,
    /// Relative path to SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub steps: BTreeMap<String, u64>,
    /// Fingerprints of the common path as consumed by each consumer.
    pub fingerprints: BTreeMap<String, String>,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub master_seed: u64,
    /// Substreams drawn, as `tag:replica[:count]`.
    pub streams: Vec<String>,
}

/// SHA-256 of the canonical TOML form.
pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// An output directory that records what is written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutputDir {
    pub fn create(root: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(cfg),
            config: cfg.clone(),
            seeds: SeedRecord {
                master_seed: cfg.master_seed,
                streams: Vec::new(),
            },
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
            steps: BTreeMap::new(),
            fingerprints: BTreeMap::new(),
            threads: current_threads(),
        };
        Ok(OutputDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Path for a relative artifact name, creating parent directories.
    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.prepare(rel)?;
        fs::write(&path, bytes)?;
        self.manifest
            .artifacts
            .insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn stream(&mut self, s: String) {
        self.manifest.seeds.streams.push(s);
    }

    pub fn timing(&mut self, phase: &str, seconds: f64) {
        self.manifest.timings.insert(phase.to_string(), seconds);
    }

    pub fn steps(&mut self, phase: &str, n: u64) {
        self.manifest.steps.insert(phase.to_string(), n);
    }

    pub fn fingerprint(&mut self, consumer: &str, fp: String) {
        self.manifest.fingerprints.insert(consumer.to_string(), fp);
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(self) -> Result<RunManifest> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(self.manifest)
    }
}

/// Checks every recorded artifact against its hash; returns the mismatches.
pub fn verify_artifacts(root: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    for (rel, hash) in &manifest.artifacts {
        let path = root.join(rel);
        if !path.exists() || &sha256_file(&path)? != hash {
            bad.push(rel.clone());
        }
    }
    Ok(bad)
}

fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();
    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::Config("thread count must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
        #[cfg(not(feature = "parallel"))]
        Some(_) => f(),
        None => f(),
    }
}
