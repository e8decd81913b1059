//! Input/output bookkeeping for a run and the manifest written next to its outputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use outcode::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::task::Task;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub task: Task,
    pub seed: u64,
    pub config_hash: String,
    /// Normalized configuration text.
    pub config: String,
    pub inputs: Vec<FileHash>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub(crate) fn canonical(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display()))))
}

/// Records what a command reads and writes.
#[derive(Debug)]
pub struct RunFiles {
    out: PathBuf,
    inputs: Vec<FileHash>,
    input_paths: BTreeSet<PathBuf>,
    outputs: Vec<String>,
}

impl RunFiles {
    pub fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self {
            out: canonical(out)?,
            inputs: Vec::new(),
            input_paths: BTreeSet::new(),
            outputs: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Hashes an input file and returns its canonical path.
    /// Inputs may not live in the output directory, so no run touches another run's files.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf> {
        let p = canonical(path)?;
        if p.parent() == Some(self.out.as_path()) {
            return Err(Error::Config(format!(
                "input {} is inside the output directory; choose another --out",
                p.display()
            )));
        }
        if self.input_paths.insert(p.clone()) {
            self.inputs.push(FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(&p)?,
            });
        }
        Ok(p)
    }

    /// Path for an output file; refuses any path that is also an input.
    pub fn output(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.out.join(name);
        if self.input_paths.contains(&p) {
            return Err(Error::Config(format!(
                "output {} would overwrite an input; choose another --out",
                p.display()
            )));
        }
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(p)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.output(name)?;
        std::fs::write(p, contents)?;
        Ok(())
    }

    /// Hashes every output and writes the manifest.
    pub fn finish(mut self, tool: &str, task: Task, seed: u64, config: String, config_hash: String) -> Result<Manifest> {
        let manifest_path = self.output(MANIFEST)?;
        self.outputs.retain(|o| o != MANIFEST);
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for name in &self.outputs {
            outputs.push(FileHash {
                path: name.clone(),
                sha256: sha256_file(&self.out.join(name))?,
            });
        }
        let manifest = Manifest {
            tool: tool.to_string(),
            task,
            seed,
            config_hash,
            config,
            inputs: self.inputs,
            outputs,
        };
        std::fs::write(manifest_path, manifest.to_json())?;
        Ok(manifest)
    }
}
