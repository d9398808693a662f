//! Output directory with a hash manifest. Every artifact is recorded with
//! its SHA-256, the command that wrote it and a key describing the inputs
//! it was derived from; loading checks both.

use crate::CliError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub sha256: String,
    pub command: String,
    /// Digest of the inputs; empty for final outputs.
    pub key: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, Entry>,
    /// Wall time per command in seconds.
    pub timings: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Store {
    dir: PathBuf,
    manifest: Manifest,
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(MANIFEST);
        let manifest = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| CliError::usage(format!("{} is not a valid manifest: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(CliError::usage(format!("cannot read {}: {e}", path.display()))),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, command: &str, key: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::usage(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.artifacts.insert(
            name.to_string(),
            Entry {
                sha256: sha256_hex(bytes),
                command: command.to_string(),
                key: key.to_string(),
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, command: &str, key: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::usage(format!("serialize {name}: {e}")))?;
        bytes.push(b'\n');
        self.write_bytes(name, command, key, &bytes)
    }

    /// Reads a prerequisite written by `command`, checking hash and key.
    pub fn load<T: DeserializeOwned>(&self, name: &str, command: &str, key: &str) -> Result<(T, String), CliError> {
        let run_first = || format!("run `ztube {command}` with the same config and --out first");
        let entry = self
            .manifest
            .artifacts
            .get(name)
            .ok_or_else(|| CliError::usage(format!("{name} is missing from {}; {}", self.dir.display(), run_first())))?;
        let bytes = fs::read(self.path(name))
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}; {}", self.path(name).display(), run_first())))?;
        let sha = sha256_hex(&bytes);
        if sha != entry.sha256 {
            return Err(CliError::usage(format!(
                "{name} does not match the hash in the manifest; {}",
                run_first()
            )));
        }
        if entry.key != key {
            return Err(CliError::usage(format!(
                "{name} was produced from different inputs; {}",
                run_first()
            )));
        }
        let value = serde_json::from_slice(&bytes).map_err(|e| CliError::usage(format!("{name}: {e}; {}", run_first())))?;
        Ok((value, sha))
    }

    pub fn record_time(&mut self, command: &str, seconds: f64) {
        self.manifest.timings.insert(command.to_string(), seconds);
    }

    pub fn save(&self) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest).map_err(|e| CliError::usage(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.path(MANIFEST);
        fs::write(&path, bytes).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
    }
}
