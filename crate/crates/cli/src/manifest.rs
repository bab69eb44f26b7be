//! Run manifests and content digests.
//!
//! Manifests hold no timestamps or absolute output paths, so identical runs
//! write identical manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use codemix_core::ArtifactRef;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub pipeline_version: String,
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_sizes: Option<SplitSizes>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Collects inputs and outputs of one command and writes the manifest.
pub struct ManifestBuilder {
    manifest: RunManifest,
    base: PathBuf,
}

impl ManifestBuilder {
    /// Inputs under `base` (the run directory) are recorded relative to it.
    pub fn new(
        command: impl Into<String>,
        seed: u64,
        config: &impl Serialize,
        base: &Path,
    ) -> Result<Self> {
        Ok(ManifestBuilder {
            base: base.to_path_buf(),
            manifest: RunManifest {
                pipeline_version: PIPELINE_VERSION.into(),
                command: command.into(),
                seed,
                inputs: Vec::new(),
                config: serde_json::to_value(config)?,
                split_sizes: None,
                outputs: Vec::new(),
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let shown = path.strip_prefix(&self.base).unwrap_or(path);
        self.manifest.inputs.push(FileDigest {
            path: shown.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn split_sizes(&mut self, sizes: SplitSizes) {
        self.manifest.split_sizes = Some(sizes);
    }

    /// Writes `bytes` to `out_dir/name` and records its digest.
    pub fn write_output(
        &mut self,
        out_dir: &Path,
        name: &str,
        bytes: &[u8],
    ) -> Result<ArtifactRef> {
        let path = out_dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record_output(out_dir, name)
    }

    /// Records the digest of a file some other code already wrote.
    pub fn record_output(&mut self, out_dir: &Path, name: &str) -> Result<ArtifactRef> {
        let r = ArtifactRef {
            path: name.into(),
            sha256: sha256_file(&out_dir.join(name))?,
        };
        self.manifest.outputs.push(FileDigest {
            path: r.path.clone(),
            sha256: r.sha256.clone(),
        });
        Ok(r)
    }

    pub fn finish(self, out_dir: &Path, name: &str) -> Result<()> {
        let mut raw = serde_json::to_string_pretty(&self.manifest)?;
        raw.push('\n');
        let path = out_dir.join(name);
        fs::write(&path, raw).with_context(|| format!("writing {}", path.display()))
    }
}

/// Fails when the artifact at `base/r.path` no longer matches its recorded digest.
pub fn verify_ref(base: &Path, r: &ArtifactRef, what: &str) -> Result<()> {
    let path = base.join(&r.path);
    let actual = sha256_file(&path)?;
    if actual != r.sha256 {
        return Err(crate::UsageError(format!(
            "{what} {} does not match the model (sha256 {actual}, expected {})",
            path.display(),
            r.sha256
        ))
        .into());
    }
    Ok(())
}
