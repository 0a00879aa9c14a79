//! Run directories: `<out>/<timestamp>-<config hash>/{manifest.json, *.csv, summary.json}`.

use std::path::{Path, PathBuf};

use gated_apd::io;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub subcommand: String,
    pub config_hash: String,
    pub config: Config,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub tool_version: String,
    pub created_utc: String,
}

pub struct RunDir {
    pub path: PathBuf,
    pub run_id: String,
    artifacts: Vec<String>,
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

impl RunDir {
    /// Creates a fresh directory under `out`, suffixing the id if a run with
    /// the same timestamp and hash already exists.
    pub fn create(out: &Path, stamp: &str, hash: &str) -> CliResult<Self> {
        std::fs::create_dir_all(out).map_err(runtime)?;
        let base = format!("{stamp}-{hash}");
        let mut run_id = base.clone();
        let mut n = 1;
        loop {
            let path = out.join(&run_id);
            match std::fs::create_dir(&path) {
                Ok(()) => {
                    return Ok(RunDir {
                        path,
                        run_id,
                        artifacts: Vec::new(),
                    })
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    run_id = format!("{base}-{n}");
                    n += 1;
                }
                Err(e) => return Err(runtime(e)),
            }
        }
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<()> {
        io::write_csv(self.path.join(name), rows).map_err(runtime)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_waveform(&mut self, name: &str, w: &gated_apd::signalchain::Waveform) -> CliResult<()> {
        io::write_waveform_csv(self.path.join(name), w).map_err(runtime)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        io::write_json(self.path.join(name), value).map_err(runtime)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    pub fn write_manifest(&self, subcommand: &str, config: &Config, created_utc: String) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            run_id: self.run_id.clone(),
            subcommand: subcommand.to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            seed: config.run.seed,
            artifacts: self.artifacts.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_utc,
        };
        io::write_json(self.path.join("manifest.json"), &manifest).map_err(runtime)?;
        Ok(manifest)
    }
}
