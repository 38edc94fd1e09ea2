//! Run manifests: every subcommand records its resolved configuration,
//! input digests, and intended outputs before any computation output is
//! written, so a run can be reproduced from the manifest alone.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: u64,
    /// Fully resolved configuration, defaults materialized.
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    /// Artifact names relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(subcommand: &'static str, seed: u64, config: &C) -> Result<Self> {
        Ok(Self {
            tool: "svo-acc",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            config: serde_json::to_value(config)?,
            input_digests: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn add_input<P: AsRef<Path>>(&mut self, path: P) -> Result<()> {
        let path = path.as_ref();
        let digest = sha256_file(path)
            .with_context(|| format!("cannot digest input {}", path.display()))?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn add_outputs(&mut self, names: &[&str]) {
        self.outputs.extend(names.iter().map(|s| s.to_string()));
    }

    /// Serializes to `manifest.json` inside the output directory.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(out_dir.join("manifest.json"), body + "\n")?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
