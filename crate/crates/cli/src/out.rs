//! Experiment output directory: artifacts, a hashed manifest and a log.
//!
//! Artifacts and the manifest depend only on config and seed. Wall-clock
//! times go to `run.log`, which the manifest does not list.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const LOG: &str = "run.log";

#[derive(Debug, Serialize)]
struct Artifact {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    artifacts: Vec<Artifact>,
}

pub struct OutDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    log: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(Artifact {
            file: name.into(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &to_json(value)?)
    }

    /// Prints a line and keeps it, timestamped, for the log file.
    pub fn note(&mut self, line: impl Into<String>) {
        let line = line.into();
        println!("{line}");
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        self.log.push(format!("[{secs:.3}] {line}"));
    }

    pub fn finish(mut self, command: &str, seed: u64) -> Result<()> {
        self.artifacts.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = Manifest {
            schema_version: 1,
            command,
            seed,
            artifacts: std::mem::take(&mut self.artifacts),
        };
        let path = self.path(MANIFEST);
        fs::write(&path, to_json(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        let mut log = self.log.join("\n");
        log.push('\n');
        fs::write(self.path(LOG), log)?;
        Ok(())
    }
}
