//! Run manifests: config hash, code version, timestamps and checksums of
//! every file a subcommand wrote.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((data.len() as u64, hex::encode(Sha256::digest(&data))))
}

pub fn manifest_name(command: &str) -> String {
    format!("manifest-{command}.json")
}

/// Collects emitted files while a subcommand runs.
pub struct Emitter {
    pub dir: PathBuf,
    command: String,
    started: String,
    files: Vec<PathBuf>,
}

impl Emitter {
    pub fn new(dir: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Emitter {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Register a file already written under `dir`.
    pub fn record(&mut self, rel: &str) {
        self.files.push(PathBuf::from(rel));
    }

    pub fn write(&mut self, rel: &str, data: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, data).with_context(|| format!("writing {}", p.display()))?;
        self.record(rel);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    pub fn finish(self, config_hash: &str) -> Result<RunManifest> {
        let mut files = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let (bytes, sha256) = sha256_file(&self.dir.join(rel))?;
            files.push(FileEntry { path: rel.to_string_lossy().into_owned(), bytes, sha256 });
        }
        let m = RunManifest {
            command: self.command.clone(),
            config_hash: config_hash.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started: self.started.clone(),
            finished: chrono::Utc::now().to_rfc3339(),
            files,
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        std::fs::write(self.dir.join(manifest_name(&self.command)), s)?;
        Ok(m)
    }
}

/// Re-hash every listed file. Returns the paths that are missing or differ.
pub fn verify(dir: &Path, m: &RunManifest) -> Vec<String> {
    m.files
        .iter()
        .filter(|f| match sha256_file(&dir.join(&f.path)) {
            Ok((bytes, sha)) => bytes != f.bytes || sha != f.sha256,
            Err(_) => true,
        })
        .map(|f| f.path.clone())
        .collect()
}

pub fn load(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
