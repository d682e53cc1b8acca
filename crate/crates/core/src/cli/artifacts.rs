use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::market_data::RejectedRow;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".tidal.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Effective configuration after precedence is applied.
    pub config: BTreeMap<String, String>,
    /// Input path to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the manifest) to sha256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub rejected_rows: Vec<RejectedRow>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub started_at: String,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("malformed {}: {e}", path.display())))
    }
}

/// Reads an input file and checks it against the manifest in its directory, if any.
/// Returns the bytes and their digest.
pub fn read_verified(path: &Path) -> Result<(Vec<u8>, String), CliError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CliError::Usage(format!("{} does not exist", path.display())),
        _ => CliError::Io(e),
    })?;
    let digest = sha256_hex(&bytes);
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    if dir.join(MANIFEST_FILE).exists() {
        let manifest = RunManifest::read(dir)?;
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        match manifest.outputs.get(name) {
            Some(expected) if *expected != digest => {
                return Err(CliError::Stale {
                    path: path.to_path_buf(),
                    expected: expected.clone(),
                    actual: digest,
                });
            }
            Some(_) => {}
            None => warn!(
                "{} is not listed in its directory manifest; digest unverified",
                path.display()
            ),
        }
    } else {
        warn!(
            "{} has no manifest alongside it; digest unverified",
            path.display()
        );
    }
    Ok((bytes, digest))
}

/// Exclusive handle on an output directory. Outputs are written atomically and
/// recorded for the manifest; the lock is released on drop.
pub struct OutputDir {
    dir: PathBuf,
    lock: PathBuf,
    outputs: BTreeMap<String, String>,
    started: Instant,
    started_at: String,
}

impl OutputDir {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let lock = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                use io::Write;
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(CliError::Usage(format!(
                    "{} is locked by another run (remove {} if stale)",
                    dir.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            lock,
            outputs: BTreeMap::new(),
            started: Instant::now(),
            started_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, bytes)?;
        File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, self.dir.join(name))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Renders a CSV into memory and writes it.
    pub fn write_with<F>(&mut self, name: &str, render: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(mut self, mut manifest: ManifestDraft) -> Result<RunManifest, CliError> {
        let m = RunManifest {
            command: manifest.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: manifest.seed,
            config: std::mem::take(&mut manifest.config),
            inputs: manifest.inputs,
            outputs: std::mem::take(&mut self.outputs),
            rejected_rows: manifest.rejected_rows,
            warnings: manifest.warnings,
            started_at: self.started_at.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_vec_pretty(&m).expect("manifest serializes");
        let tmp = self.dir.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, &json)?;
        fs::rename(&tmp, self.dir.join(MANIFEST_FILE))?;
        Ok(m)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Manifest fields supplied by a command.
#[derive(Debug, Default)]
pub struct ManifestDraft {
    pub command: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub rejected_rows: Vec<RejectedRow>,
    pub warnings: Vec<String>,
}

impl ManifestDraft {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn input(&mut self, path: &Path, digest: String) {
        self.inputs.insert(path.display().to_string(), digest);
    }
}
