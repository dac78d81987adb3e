//! CSV artifacts and the run manifest.
//!
//! Every file is rendered in memory, written to a temporary file in the
//! output directory and renamed into place only after all of them are ready.
//! Floats use Rust's shortest round-trip formatting, so parsing a file back
//! yields the exact in-memory values.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub seed: Option<u64>,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_s: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Files staged for one run.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Render a CSV file with `header`, filling rows through `fill`.
    pub fn csv<F>(&mut self, name: &str, header: &[&str], fill: F) -> csv::Result<()>
    where
        F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
    {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            fill(&mut w)?;
            w.flush()?;
        }
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Write every staged file plus `manifest.json` into `dir`.
    pub fn commit(self, dir: &Path, mut manifest: RunManifest) -> std::io::Result<RunManifest> {
        std::fs::create_dir_all(dir)?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, data) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(data)?;
            tmp.as_file().sync_all()?;
            staged.push((name, tmp));
            manifest.artifacts.push(Artifact {
                file: name.clone(),
                sha256: hex::encode(Sha256::digest(data)),
                bytes: data.len() as u64,
            });
        }
        for (name, tmp) in staged {
            tmp.persist(dir.join(name)).map_err(|e| e.error)?;
        }
        let json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&json)?;
        tmp.write_all(b"\n")?;
        tmp.persist(dir.join(MANIFEST_FILE)).map_err(|e| e.error)?;
        Ok(manifest)
    }
}

/// SHA-256 of a file on disk, hex encoded.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub fn read_manifest(dir: &Path) -> std::io::Result<RunManifest> {
    let data = std::fs::read(dir.join(MANIFEST_FILE))?;
    serde_json::from_slice(&data).map_err(std::io::Error::other)
}

/// Read a two-column numeric CSV with a header row.
pub fn read_pairs(path: &Path) -> csv::Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect()
}

/// Resolve the output directory: explicit flag, then the config file, then
/// `TCL_DESYNC_OUTPUT_DIR`, then `out/<name>`.
pub fn resolve_output_dir(flag: Option<&Path>, from_config: Option<&Path>, env: Option<&Path>, name: &str) -> PathBuf {
    flag.or(from_config)
        .map(Path::to_path_buf)
        .or_else(|| env.map(|e| e.join(name)))
        .unwrap_or_else(|| PathBuf::from("out").join(name))
}
