//! Output directory with a checksummed inventory and a run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: &'static str,
    pub subcommand: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub timings: Vec<StageTiming>,
    pub files: Vec<FileEntry>,
}

/// Writes result files and records their checksums; the manifest goes last.
#[derive(Debug)]
pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    timings: Vec<StageTiming>,
}

impl OutputWriter {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Io(std::io::Error::new(e.kind(), format!("cannot create {}: {e}", dir.display())))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| {
            CliError::Io(std::io::Error::new(e.kind(), format!("cannot write {}: {e}", path.display())))
        })?;
        let entry = FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        };
        match self.files.iter_mut().find(|f| f.path == name) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.<subcommand>.json`. It carries wall times and is the
    /// only file that differs between identical runs.
    pub fn finish(self, subcommand: &str, scenario: &str, scenario_hash: &str) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            scenario: scenario.to_string(),
            scenario_hash: scenario_hash.to_string(),
            timings: self.timings,
            files: self.files,
        };
        let path = self.dir.join(manifest_name(subcommand));
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
        bytes.push(b'\n');
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

pub fn manifest_name(subcommand: &str) -> String {
    format!("manifest.{subcommand}.json")
}

/// Two-column whitespace-separated series.
pub fn dat_series(header: &str, rows: &[(f64, f64)]) -> Vec<u8> {
    let mut s = format!("# {header}\n");
    for (a, b) in rows {
        s.push_str(&format!("{a:.10e} {b:.10e}\n"));
    }
    s.into_bytes()
}
