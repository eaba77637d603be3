//! Run manifest: what was run, with which configuration, on which bytes.
//!
//! Inputs are identified by a git-style object hash, `sha256("blob <len>\0"
//! ++ content)`, so `git hash-object` in a SHA-256 repository gives the same
//! digest. Directories hash every regular file beneath them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

fn collect(path: &Path, out: &mut Vec<FileHash>) -> Result<()> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for e in entries {
            collect(&e, out)?;
        }
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        out.push(FileHash { path: path.to_path_buf(), sha256: blob_hash(&bytes) });
    }
    Ok(())
}

pub fn hash_paths<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<FileHash>> {
    let mut out = Vec::new();
    for p in paths {
        collect(p.as_ref(), &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    /// The effective configuration after flag overrides, as TOML.
    pub config: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args: std::env::args().collect(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
