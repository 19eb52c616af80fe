use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hex SHA-256 of a file, streamed.
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        let io = |e| CliError::io(path, e);
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path).map_err(io)?,
            bytes: fs::metadata(path).map_err(io)?.len(),
        })
    }
}

/// Record of one CLI invocation: what went in, what came out, and how long
/// each phase took.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config_sha256: Option<String>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub started_unix_ms: u128,
    pub wall_clock_ms: f64,
    pub phase_ms: BTreeMap<String, f64>,
}

/// Builds a [`RunManifest`] while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str, seed: Option<u64>) -> Self {
        let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config_sha256: None,
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_unix_ms,
                wall_clock_ms: 0.0,
                phase_ms: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn manifest_seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn config_bytes(&mut self, bytes: &[u8]) {
        self.manifest.config_sha256 = Some(sha256_hex(bytes));
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.inputs.push(FileEntry::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.outputs.push(FileEntry::of(path)?);
        Ok(())
    }

    pub fn phase(&mut self, name: &str, ms: f64) {
        *self.manifest.phase_ms.entry(name.to_string()).or_default() += ms;
    }

    /// Stamps the wall-clock and writes the manifest as pretty JSON.
    pub fn finish(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.manifest.wall_clock_ms = self.started.elapsed().as_secs_f64() * 1e3;
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        Ok(self.manifest)
    }
}

/// Milliseconds elapsed since `t`.
pub fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
