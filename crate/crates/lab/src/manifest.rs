use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use crate::io::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub outputs: Vec<PathBuf>,
    pub message: Option<String>,
}

/// Collects what a run produced and writes it out once the run ends.
#[derive(Debug)]
pub struct RunRecord {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    started: Instant,
}

impl RunRecord {
    pub fn new(subcommand: &str, argv: Vec<String>) -> Self {
        RunRecord {
            subcommand: subcommand.to_string(),
            argv,
            seed: None,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(&self, dir: &Path, exit_code: i32, message: Option<String>) -> Result<PathBuf> {
        let manifest = Manifest {
            subcommand: self.subcommand.clone(),
            argv: self.argv.clone(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            exit_code,
            outputs: self.outputs.clone(),
            message,
        };
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, &manifest)?;
        Ok(path)
    }
}
