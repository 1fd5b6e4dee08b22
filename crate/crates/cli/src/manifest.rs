//! Run manifests: what ran, with which configuration, and checksums of every
//! input and output. No timestamps, so reruns diff cleanly.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use repdensity::Error;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, Error> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub core_version: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    /// `config` is the fully resolved configuration, including the
    /// command-line arguments that shape the outputs.
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let canonical = serde_json::to_vec(&config).expect("json value serializes");
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: repdensity::VERSION.to_string(),
            config_sha256: sha256_bytes(&canonical),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Error> {
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), Error> {
        self.outputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}
