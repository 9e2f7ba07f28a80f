//! Run manifests: what a command produced, from which effective config and
//! seed, with content hashes for the deterministic artifacts.
//!
//! Wall-clock-dependent files (the training log) are listed without hashes
//! so that repeated runs of the same (config, seed) produce byte-identical
//! manifests.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::FormatError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub outputs: Vec<OutputEntry>,
    /// Logs vary run to run (timings) and are listed without hashes.
    pub logs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config_canonical: &str, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            config_sha256: sha256_bytes(config_canonical.as_bytes()),
            seed,
            outputs: Vec::new(),
            logs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, base: &Path, path: &Path) -> Result<(), FormatError> {
        let rel = path
            .strip_prefix(base)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.outputs.push(OutputEntry {
            path: rel,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_log(&mut self, base: &Path, path: &Path) {
        let rel = path
            .strip_prefix(base)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned();
        self.logs.push(rel);
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        let mut w = BufWriter::new(File::create(path)?);
        let text = serde_json::to_string_pretty(self).expect("manifest serialize");
        writeln!(w, "{text}")?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Manifest, FormatError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| FormatError::malformed("manifest", e.to_string()))
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String, FormatError> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
