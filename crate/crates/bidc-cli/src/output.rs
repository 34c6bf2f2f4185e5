//! Staged outputs, atomic file writes and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Files produced by a run, held in memory until the run has succeeded.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Records a headline number; non-finite values become a note since
    /// JSON cannot hold them.
    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        if value.is_finite() {
            self.metrics.insert(name, value);
        } else {
            self.notes.push(format!("{name} is {value}"));
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|f| f.0.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|f| f.0 == name)
            .map(|f| f.1.as_slice())
    }

    /// Writes every file under `dir` and returns `(name, sha256)` pairs.
    pub fn commit(&self, dir: &Path) -> std::io::Result<Vec<OutputFile>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
            out.push(OutputFile {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        Ok(out)
    }
}

/// Writes to a sibling temporary file and renames it into place, so the
/// target path only ever holds a complete file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp: PathBuf = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Clone, Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub task: String,
    pub config_sha256: String,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<OutputFile>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";
