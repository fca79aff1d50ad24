use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::failure::CliResult;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Everything needed to rerun a command: the resolved flags, inputs, outputs
/// and seed. `wall_time_s` is the only field that varies between reruns.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, A: Serialize> {
    pub command: &'a str,
    pub tool_version: &'a str,
    pub argv: Vec<String>,
    pub config: &'a A,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

pub struct ManifestBuilder {
    started: Instant,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start() -> Self {
        Self {
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.inputs.push(p.as_ref().to_path_buf());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.outputs.push(p.as_ref().to_path_buf());
    }

    pub fn write<A: Serialize>(
        self,
        path: &Path,
        command: &str,
        config: &A,
        seed: Option<u64>,
    ) -> CliResult<()> {
        let m = RunManifest {
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            config,
            seed,
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(std::io::Error::from)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
