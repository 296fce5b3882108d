//! Run manifests: everything needed to repeat a command, plus hashes of what
//! it read and wrote.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::Failure;

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub config_file: Option<PathBuf>,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, PathBuf)>,
    /// File names inside the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            ..Manifest::default()
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.push((name.to_string(), path.to_path_buf()));
    }

    pub fn output(&mut self, file: impl Into<String>) {
        self.outputs.push(file.into());
    }

    /// Writes `manifest.txt` into `out_dir`. Outputs are recorded by file
    /// name so identical reruns into different directories produce
    /// identical manifests.
    pub fn write(&self, out_dir: &Path) -> Result<(), Failure> {
        let mut text = format!("command={}\n", self.command);
        if let Some(cf) = &self.config_file {
            text.push_str(&format!(
                "config_file={} sha256={}\n",
                cf.display(),
                sha256_file(cf)?
            ));
        }
        if let Some(seed) = self.seed {
            text.push_str(&format!("seed={seed}\n"));
        }
        for (k, v) in &self.config {
            text.push_str(&format!("config.{k}={v}\n"));
        }
        for (name, path) in &self.inputs {
            text.push_str(&format!(
                "input.{name}={} sha256={}\n",
                path.display(),
                sha256_file(path)?
            ));
        }
        for file in &self.outputs {
            text.push_str(&format!(
                "output={file} sha256={}\n",
                sha256_file(&out_dir.join(file))?
            ));
        }
        write_file(&out_dir.join("manifest.txt"), text)
    }
}
