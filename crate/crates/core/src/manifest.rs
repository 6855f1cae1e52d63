//! Run manifests: every CLI run writes one before doing real work, capturing
//! the resolved configuration, input digests, output paths, and seed —
//! enough to reproduce the run exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub version: u32,
    pub subcommand: String,
    /// Fully resolved configuration, defaults materialized.
    pub config: serde_json::Value,
    /// Input path -> sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            version: MANIFEST_VERSION,
            subcommand: subcommand.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed,
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Hex sha256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.txt");
        std::fs::write(&path, "hello").unwrap();
        let a = sha256_file(&path).unwrap();
        let b = sha256_file(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        std::fs::write(&path, "hello!").unwrap();
        assert_ne!(sha256_file(&path).unwrap(), a);
    }

    #[test]
    fn manifest_writes_json() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "data").unwrap();
        let manifest_path = dir.path().join("run.manifest.json");
        let manifest = RunManifest::new("ingest", serde_json::json!({"strict": false}), 7)
            .input(&input)
            .unwrap()
            .output(Path::new("out.jsonl"));
        manifest.write(&manifest_path).unwrap();
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["subcommand"], "ingest");
        assert_eq!(value["seed"], 7);
        assert!(value["inputs"][input.display().to_string()]
            .as_str()
            .unwrap()
            .len() == 64);
    }
}
