use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::failure::Failure;

pub const RUN_MANIFEST: &str = "run-manifest.json";
pub const ERROR_FILE: &str = "error.json";

/// Everything needed to repeat a run and check that its outputs match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub threads: usize,
    pub command: Command,
    pub dataset_manifest_hash: Option<String>,
    /// Data-access checks made during the run.
    pub audit: Vec<String>,
    /// SHA-256 of every output file, keyed by path relative to the output
    /// directory.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("run manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("run manifest {}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walked below root").to_path_buf());
        }
    }
    Ok(())
}

/// Hashes of all files below `dir` except the run manifest and error file.
pub fn hash_outputs(dir: &Path) -> std::io::Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    let mut out = BTreeMap::new();
    for rel in files {
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if key == RUN_MANIFEST || key == ERROR_FILE {
            continue;
        }
        out.insert(key, sha256_hex(&fs::read(dir.join(&rel))?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn outputs_skip_manifest_and_error_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/a.txt"), "a").unwrap();
        fs::write(dir.path().join(RUN_MANIFEST), "{}").unwrap();
        fs::write(dir.path().join(ERROR_FILE), "{}").unwrap();
        let hashes = hash_outputs(dir.path()).unwrap();
        assert_eq!(hashes.keys().collect::<Vec<_>>(), vec!["sub/a.txt"]);
    }
}
