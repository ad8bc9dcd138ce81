// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use logitflow::io::write_atomic;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Record of one command invocation, written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: &'static str,
    pub config: ExperimentConfig,
    pub inputs: BTreeMap<PathBuf, String>,
    pub checkpoints: BTreeMap<PathBuf, String>,
    pub artifacts: Vec<PathBuf>,
    pub wall_seconds: f64,
}

pub struct Run {
    pub out: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl Run {
    /// Creates the output directory, then echoes and persists the resolved config.
    pub fn start(command: &str, config: &ExperimentConfig, out: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        let text = config.to_toml();
        println!("# resolved config ({command})\n{text}");
        let path = out.join("config.toml");
        write_atomic(&path, text.as_bytes())?;
        Ok(Self {
            out,
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION"),
                config: config.clone(),
                inputs: BTreeMap::new(),
                checkpoints: BTreeMap::new(),
                artifacts: vec![path],
                wall_seconds: 0.0,
            },
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.manifest.inputs.insert(path.to_path_buf(), h);
        Ok(())
    }

    pub fn checkpoint(&mut self, path: &Path) -> Result<(), CliError> {
        let h = sha256_file(path)?;
        self.manifest.checkpoints.insert(path.to_path_buf(), h);
        self.manifest.artifacts.push(path.to_path_buf());
        Ok(())
    }

    pub fn artifact(&mut self, path: PathBuf) {
        self.manifest.artifacts.push(path);
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        write_atomic(&path, &serde_json::to_vec_pretty(value).map_err(logitflow::Error::from)?)?;
        self.artifact(path.clone());
        Ok(path)
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = self.out.join("manifest.json");
        write_atomic(&path, &serde_json::to_vec_pretty(&self.manifest).map_err(logitflow::Error::from)?)?;
        println!("manifest: {}", path.display());
        Ok(path)
    }
}
