//! Run manifests: what was run, with which configuration, over which exact inputs.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Git-style blob hash (`blob <len>\0<bytes>`) with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a file, or of every file under a directory (sorted by relative path).
pub fn path_hash(path: &Path) -> Result<String, CliError> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect(path, path, &mut files)?;
        files.sort();
        let mut listing = String::new();
        for rel in files {
            let h = path_hash(&path.join(&rel))?;
            listing.push_str(&format!("{h} {}\n", rel.display()));
        }
        return Ok(blob_hash(listing.as_bytes()));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    Ok(blob_hash(&bytes))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_dir() {
            collect(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub role: String,
    pub path: PathBuf,
    pub hash: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: Option<Value>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub notes: Vec<String>,
    pub results: Value,
}

impl Manifest {
    pub fn new(command: &'static str) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            args: std::env::args().skip(1).collect(),
            seed: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            results: Value::Null,
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileRecord {
            role: role.to_string(),
            path: path.to_path_buf(),
            hash: path_hash(path)?,
        });
        Ok(())
    }

    /// Records an output file by its name relative to the output directory.
    pub fn output(&mut self, role: &str, out_dir: &Path, name: &str) -> Result<(), CliError> {
        self.outputs.push(FileRecord {
            role: role.to_string(),
            path: PathBuf::from(name),
            hash: path_hash(&out_dir.join(name))?,
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        let mut body = serde_json::to_string_pretty(self).map_err(storyclass::Error::from)?;
        body.push('\n');
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_blob_layout() {
        // printf 'hello\n' | git hash-object --object-format=sha256 --stdin
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
