//! Stage manifests and the output-directory lock.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "stage.json";

/// Exclusive ownership of an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Precondition(format!(
                "{} is in use by another pipeline (delete {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = std::fs::File::open(path)?;
    std::io::copy(&mut f, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// Hash of a stage name and its inputs.
pub fn stage_key(stage: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    for p in parts {
        h.update([0u8]);
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Record of a completed stage: its input key and the hash of every output
/// file, relative to the stage directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub key: String,
    pub outputs: BTreeMap<String, String>,
}

impl StageManifest {
    /// Hash of the outputs, for downstream keys.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.outputs).expect("map serializes"))
    }
}

/// The manifest in `dir` if it was written for `key` and every output is
/// still present and unchanged.
pub fn completed(dir: &Path, key: &str) -> Option<StageManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    let m: StageManifest = serde_json::from_str(&text).ok()?;
    if m.key != key {
        return None;
    }
    for (rel, hash) in &m.outputs {
        if sha256_file(&dir.join(rel)).ok()? != *hash {
            return None;
        }
    }
    Some(m)
}

fn collect(dir: &Path, root: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(&path, root, out)?;
        } else if e.file_name() != MANIFEST_FILE {
            let rel = path.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(())
}

/// Hashes everything under `dir` and writes the manifest.
pub fn record(dir: &Path, stage: &str, key: &str) -> Result<StageManifest> {
    let mut outputs = BTreeMap::new();
    collect(dir, dir, &mut outputs)?;
    let m = StageManifest { stage: stage.to_string(), key: key.to_string(), outputs };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&m)?)?;
    Ok(m)
}

/// Empties `dir` before a stage rewrites it.
pub fn reset(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("a.txt"), "one").unwrap();
        let m = record(d, "s", "k1").unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert!(completed(d, "k1").is_some());
        assert!(completed(d, "k2").is_none());
        std::fs::write(d.join("a.txt"), "two").unwrap();
        assert!(completed(d, "k1").is_none());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let l = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(l);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
