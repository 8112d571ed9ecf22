//! Per-stage run manifests: resolved arguments, seeds, and sha256 of every
//! input and output file. A stage whose recorded arguments, seeds and input
//! hashes match the current invocation, and whose outputs are unchanged on
//! disk, is skipped.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub finished_unix_ms: u64,
}

pub fn sha256_file(path: &Path) -> Result<FileHash> {
    let mut f = std::fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).with_context(|| format!("read {}", path.display()))?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        h.update(&buf[..n]);
    }
    Ok(FileHash {
        path: path.to_path_buf(),
        sha256: hex::encode(h.finalize()),
        bytes,
    })
}

/// Files under `path` in sorted order; a plain file yields itself.
pub fn expand(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("list {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for e in entries {
        out.extend(expand(&e)?);
    }
    Ok(out)
}

fn hash_all(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    let mut files = Vec::new();
    for p in paths {
        files.extend(expand(p)?);
    }
    files.sort();
    files.dedup();
    files.iter().map(|p| sha256_file(p)).collect()
}

/// A stage invocation being tracked.
#[derive(Debug, Clone)]
pub struct Stage {
    pub command: String,
    pub manifest_path: PathBuf,
    pub args: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    inputs: Vec<FileHash>,
}

impl Stage {
    pub fn new(command: &str, manifest_path: PathBuf, inputs: &[PathBuf]) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            manifest_path,
            args: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: hash_all(inputs)?,
        })
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.insert(key.into(), value.to_string());
        self
    }

    pub fn seed(mut self, key: &str, value: u64) -> Self {
        self.seeds.insert(key.into(), value);
        self
    }

    /// The previous manifest, if it describes this exact invocation and every
    /// recorded output still hashes the same.
    pub fn up_to_date(&self) -> Result<Option<RunManifest>> {
        let Ok(text) = std::fs::read_to_string(&self.manifest_path) else {
            return Ok(None);
        };
        let Ok(prev) = serde_json::from_str::<RunManifest>(&text) else {
            return Ok(None);
        };
        if prev.command != self.command
            || prev.args != self.args
            || prev.seeds != self.seeds
            || prev.inputs != self.inputs
            || prev.outputs.is_empty()
        {
            return Ok(None);
        }
        for out in &prev.outputs {
            if !out.path.is_file() || sha256_file(&out.path)? != *out {
                return Ok(None);
            }
        }
        Ok(Some(prev))
    }

    pub fn finish(self, outputs: &[PathBuf]) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            args: self.args,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: hash_all(outputs)?,
            finished_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        if let Some(dir) = self.manifest_path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&self.manifest_path, text + "\n")
            .with_context(|| format!("write {}", self.manifest_path.display()))?;
        Ok(manifest)
    }
}
