//! Run manifests: resolved config, named sub-seeds, artifact checksums,
//! and wall-clock timings. Re-running a subcommand with the manifest's
//! config and seed reproduces every artifact byte for byte.

use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct SubSeed {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    /// FNV-1a 64-bit checksum of the file contents, hex encoded.
    pub fnv1a64: String,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub sub_seeds: Vec<SubSeed>,
    pub artifacts: Vec<Artifact>,
    pub timings: Vec<Timing>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            master_seed: config.ginc.master_seed,
            config: config.clone(),
            sub_seeds: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn record_seed(&mut self, name: impl Into<String>, seed: u64) {
        self.sub_seeds.push(SubSeed { name: name.into(), seed });
    }

    /// Checksum an already-written artifact.
    pub fn record_artifact(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("checksumming {}", path.display()))?;
        self.artifacts.push(Artifact {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
        });
        Ok(())
    }

    pub fn record_timing(&mut self, label: impl Into<String>, started: Instant) {
        self.timings.push(Timing {
            label: label.into(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        write_atomic(&path, json.as_bytes())?;
        Ok(path)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Write through a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} -> {}", tmp.display(), path.display()))?;
    Ok(())
}

/// Move a file written elsewhere in the same directory into its final name.
pub fn finalize_atomic(tmp: &Path, path: &Path) -> Result<()> {
    std::fs::rename(tmp, path)
        .with_context(|| format!("renaming {} -> {}", tmp.display(), path.display()))?;
    Ok(())
}
