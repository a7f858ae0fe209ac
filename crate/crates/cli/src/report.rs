//! Provenance envelope shared by every report, and atomic output writing.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Globals;

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRecord {
    pub fn of_bytes(role: &str, path: &Path, bytes: &[u8]) -> Self {
        Self {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: sha256_hex(bytes),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct Envelope<'a, C, R> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    inputs: &'a [FileRecord],
    outputs: &'a [FileRecord],
    config: &'a C,
    result: &'a R,
}

/// Collects input and output fingerprints while a command runs.
pub struct Provenance {
    command: &'static str,
    seed: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl Provenance {
    pub fn new(command: &'static str, globals: &Globals) -> Self {
        Self {
            command,
            seed: globals.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes `bytes` atomically and records the output's fingerprint.
    pub fn write_output(&mut self, role: &str, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(FileRecord::of_bytes(role, path, bytes));
        Ok(())
    }

    pub fn render<C: Serialize, R: Serialize>(&self, config: &C, result: &R) -> anyhow::Result<Vec<u8>> {
        let env = Envelope {
            tool: "seme",
            version: seme_core::VERSION,
            command: self.command,
            seed: self.seed,
            inputs: &self.inputs,
            outputs: &self.outputs,
            config,
            result,
        };
        let mut bytes = serde_json::to_vec_pretty(&env)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn write_report<C: Serialize, R: Serialize>(&self, path: &Path, config: &C, result: &R) -> anyhow::Result<()> {
        let bytes = self.render(config, result)?;
        write_atomic(path, &bytes)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    seme_core::archive::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}
