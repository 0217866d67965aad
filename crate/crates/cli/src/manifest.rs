use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Fully resolved configuration used by the run.
    pub config: RunConfig,
    pub seed: u64,
    pub workers: usize,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("manifest {}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Output directory plus a record of everything read and written.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    prefix: PathBuf,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    started: SystemTime,
}

impl Workspace {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Workspace {
            root: root.to_path_buf(),
            prefix: PathBuf::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: SystemTime::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Later writes go to `sub` below the root.
    pub fn set_prefix(&mut self, sub: impl Into<PathBuf>) {
        self.prefix = sub.into();
    }

    /// Read an input file and record its digest.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String, CliError> {
        String::from_utf8(self.read(path)?).map_err(|_| CliError::Input(format!("{} is not UTF-8", path.display())))
    }

    /// Write `bytes` to a relative path inside the output directory.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let rel = self.prefix.join(name);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(CliError::Config(format!("output {name:?} would leave the output directory")));
        }
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes.as_ref())?;
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.outputs.insert(key, sha256_hex(bytes.as_ref()));
        Ok(path)
    }

    pub fn finish(&mut self, command: &str, args: &[String], config: &RunConfig, workers: usize) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: "stg".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: args.to_vec(),
            config: config.clone(),
            seed: config.seed,
            workers,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            started_unix: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_seconds: self.started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.root.join(MANIFEST_NAME), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn refuses_escaping_paths() {
        let dir = std::env::temp_dir().join(format!("stg-ws-{}", std::process::id()));
        let mut ws = Workspace::create(&dir).unwrap();
        assert!(ws.write("../x", b"1").is_err());
        assert!(ws.write("/etc/x", b"1").is_err());
        ws.write("a/b.txt", b"1").unwrap();
        assert!(ws.outputs.contains_key("a/b.txt"));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
