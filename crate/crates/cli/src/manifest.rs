use std::path::Path;
use std::time::Instant;

use kcf::error::Result;
use kcf::io::{read_json, write_json, MANIFEST_JSON};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One command invocation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

/// The single `manifest.json` of a directory; later runs are appended.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ManifestFile {
    pub runs: Vec<RunManifest>,
}

pub struct Recorder {
    command: String,
    started: Instant,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        Recorder {
            command: command.to_string(),
            started: Instant::now(),
        }
    }

    pub fn finish(
        self,
        dir: &Path,
        config: Value,
        seeds: Vec<u64>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Result<()> {
        let path = dir.join(MANIFEST_JSON);
        let mut file: ManifestFile = if path.is_file() {
            read_json(&path)?
        } else {
            ManifestFile::default()
        };
        file.runs.push(RunManifest {
            command: self.command,
            config,
            seeds,
            inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        });
        write_json(&path, &file)
    }
}
