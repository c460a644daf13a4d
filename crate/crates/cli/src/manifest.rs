use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written beside file outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub inputs: Vec<FileHash>,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects inputs and outputs for one invocation.
#[derive(Debug, Default)]
pub struct Recorder {
    command: Vec<String>,
    seed: Option<u64>,
    inputs: Vec<FileHash>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: Vec<String>) -> Self {
        Recorder {
            command,
            ..Default::default()
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Hash an input now, before any command rewrites it.
    pub fn input(&mut self, p: &Path) -> Result<()> {
        let name = p.display().to_string();
        if p != Path::new("-") && !self.inputs.iter().any(|h| h.path == name) {
            self.inputs.push(hash_file(p)?);
        }
        Ok(())
    }

    /// Record stdin content as an input.
    pub fn stdin(&mut self, text: &str) {
        self.inputs.push(FileHash {
            path: "-".into(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }

    /// Write `text` to `path` and remember it as an output.
    pub fn write(&mut self, path: &Path, text: &str) -> Result<()> {
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Emit `<first output>.manifest.json` when anything was written.
    pub fn finish(self) -> Result<()> {
        let Some(first) = self.outputs.first() else {
            return Ok(());
        };
        let mut target = first.as_os_str().to_owned();
        target.push(".manifest.json");
        let m = RunManifest {
            command: self.command,
            inputs: self.inputs,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            outputs: self.outputs.iter().map(|p| hash_file(p)).collect::<Result<_>>()?,
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        std::fs::write(&target, s).with_context(|| format!("writing {}", PathBuf::from(&target).display()))?;
        Ok(())
    }
}
