//! Per-run manifest: what went in, what came out, and digests of both.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::invalid;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Input path to digest.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to digest.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Output directory that records every file written into it and refuses
/// to overwrite any input.
pub struct RunDir {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path, inputs: &[PathBuf]) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let inputs = inputs.iter().filter_map(|p| p.canonicalize().ok()).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs,
            written: Vec::new(),
        })
    }

    /// Path for output `name`, registered for the manifest.
    pub fn file(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Ok(c) = path.canonicalize() {
            if self.inputs.contains(&c) {
                return Err(invalid(format!("output {} would overwrite an input", path.display())));
            }
        }
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(path)
    }

    /// Hashes inputs and outputs and writes the manifest.
    pub fn finish<C: Serialize>(self, command: &str, config: &C, seeds: Vec<u64>) -> Result<RunManifest> {
        let config = serde_json::to_value(config)?;
        let config_sha256 = hex::encode(Sha256::digest(serde_json::to_vec(&config)?));
        let mut inputs = BTreeMap::new();
        for p in &self.inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        let mut outputs = BTreeMap::new();
        for name in &self.written {
            outputs.insert(name.clone(), sha256_file(&self.dir.join(name))?);
        }
        let manifest = RunManifest {
            tool: "latent-demand".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256,
            config,
            seeds,
            inputs,
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(manifest)
    }
}
