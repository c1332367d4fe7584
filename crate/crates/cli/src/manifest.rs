//! Run manifests: what was run, on which inputs, producing which bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Command;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_SCHEMA: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub command: Command,
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u64,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub invocation: Invocation,
    /// Working directory the relative input paths resolve against.
    pub cwd: PathBuf,
    pub threads: usize,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub summary: serde_json::Value,
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("malformed manifest {}: {e}", path.display())))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(CliError::Config(format!("manifest schema {} is not supported", m.schema)));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_record(path: &Path, shown: String) -> CliResult<FileRecord> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileRecord {
        path: shown,
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Output directory plus bookkeeping for the manifest.
pub struct Ctx {
    pub out_dir: PathBuf,
    pub threads: usize,
    outputs: BTreeMap<String, FileRecord>,
    inputs: BTreeMap<String, FileRecord>,
    pub seeds: BTreeMap<String, u64>,
    pub summary: serde_json::Map<String, serde_json::Value>,
    pub timings: BTreeMap<String, f64>,
    /// Set when a check fails after its outputs were written.
    pub failure: Option<String>,
    start: Instant,
}

impl Ctx {
    pub fn new(out_dir: PathBuf, threads: usize) -> CliResult<Self> {
        fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir,
            threads,
            outputs: BTreeMap::new(),
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            summary: serde_json::Map::new(),
            timings: BTreeMap::new(),
            failure: None,
            start: Instant::now(),
        })
    }

    pub fn out_path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    /// Writes an output atomically and records its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_path(rel);
        write_atomic(&path, bytes)?;
        self.outputs.insert(
            rel.to_string(),
            FileRecord {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(path)
    }

    /// Records an output that was written directly, e.g. by a worker thread.
    pub fn record_output(&mut self, rel: &str) -> CliResult<()> {
        let rec = file_record(&self.out_path(rel), rel.to_string())?;
        self.outputs.insert(rel.to_string(), rec);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> CliResult<PathBuf> {
        if path.is_file() {
            let shown = path.display().to_string();
            let rec = file_record(path, shown.clone())?;
            self.inputs.insert(shown, rec);
        } else if !path.exists() {
            return Err(CliError::Data(format!("input {} does not exist", path.display())));
        }
        Ok(path.to_path_buf())
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.to_string(), serde_json::to_value(value).expect("serialisable summary"));
    }

    pub fn finish(mut self, name: &str, invocation: Invocation) -> CliResult<Manifest> {
        self.timings.insert("total_secs".into(), self.start.elapsed().as_secs_f64());
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            tool: "skillpath".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: name.into(),
            invocation,
            cwd: std::env::current_dir()?,
            threads: self.threads,
            seeds: self.seeds,
            inputs: self.inputs.into_values().collect(),
            outputs: self.outputs.into_values().collect(),
            summary: serde_json::Value::Object(self.summary),
            timings: self.timings,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&self.out_dir.join(format!("{name}.manifest.json")), text.as_bytes())?;
        Ok(manifest)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!("{name}.partial"));
    fs::write(&tmp, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Data(format!("cannot move into {}: {e}", path.display())))?;
    Ok(())
}
