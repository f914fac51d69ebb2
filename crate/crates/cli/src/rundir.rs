//! Run directory: artifact writing, content hashes and the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Derivation of per-replica streams, recorded in every manifest.
pub const SEED_RULE: &str = "replica i uses ChaCha8Rng::seed_from_u64(splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15)), wrapping arithmetic";

pub struct RunDir {
    pub path: PathBuf,
    artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    task: &'a str,
    config: Option<&'static str>,
    seed: Option<u64>,
    seed_rule: &'static str,
    parallel_feature: bool,
    converged: Option<bool>,
    warnings: &'a [String],
    summary: &'a serde_json::Map<String, serde_json::Value>,
    artifacts: &'a BTreeMap<String, String>,
    /// SHA-256 over the sorted `name:digest` lines of all artifacts.
    outputs_hash: String,
}

/// Task-level facts collected while running, written into the manifest.
#[derive(Default)]
pub struct RunNotes {
    pub seed: Option<u64>,
    pub converged: Option<bool>,
    pub warnings: Vec<String>,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl RunNotes {
    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.summary.insert(key.to_string(), v);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
        Ok(RunDir { path: path.to_path_buf(), artifacts: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.path.join(name);
        fs::write(&target, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", target.display())))?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Render into memory with `f`, then write and hash.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<(), CliError> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        self.write(name, &buf)
    }

    pub fn outputs_hash(&self) -> String {
        let lines: String = self.artifacts.iter().map(|(k, v)| format!("{k}:{v}\n")).collect();
        sha256_hex(lines.as_bytes())
    }

    pub fn finish(self, task: &str, notes: &RunNotes) -> Result<String, CliError> {
        let outputs_hash = self.outputs_hash();
        let manifest = Manifest {
            tool: "flocksim",
            version: env!("CARGO_PKG_VERSION"),
            task,
            config: self.artifacts.contains_key("config.toml").then_some("config.toml"),
            seed: notes.seed,
            seed_rule: SEED_RULE,
            parallel_feature: flocksim_core::Exec::is_parallel_available(),
            converged: notes.converged,
            warnings: &notes.warnings,
            summary: &notes.summary,
            artifacts: &self.artifacts,
            outputs_hash: outputs_hash.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let target = self.path.join("manifest.json");
        fs::write(&target, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", target.display())))?;
        Ok(outputs_hash)
    }
}
