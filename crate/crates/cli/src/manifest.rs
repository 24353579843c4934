use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use llmimage::io::{file_digest, write_atomic};
use llmimage::{Capabilities, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::Backend;

/// Record of one successful command run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Capabilities>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    /// Queries that reached the API (cache hits excluded).
    pub call_count: u64,
    pub cache_hits: u64,
    /// HTTP attempts, including the capabilities request and retries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_trips: Option<u64>,
    pub wall_time_s: f64,
    /// sha256 of every file written, keyed by path.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub result: Value,
}

pub fn default_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    command: String,
    parameters: Value,
    start: Instant,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, parameters: &impl Serialize) -> Self {
        Self {
            command: command.into(),
            parameters: serde_json::to_value(parameters).unwrap_or(Value::Null),
            start: Instant::now(),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(self, path: &Path, backend: Option<&Backend>, result: Value) -> Result<RunManifest> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| Ok((p.display().to_string(), file_digest(p)?)))
            .collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command,
            parameters: self.parameters,
            capabilities: backend.map(|b| b.session.capabilities().clone()),
            model_id: backend.and_then(Backend::model_id),
            call_count: backend.map_or(0, |b| b.session.calls()),
            cache_hits: backend.map_or(0, |b| b.session.cache_hits()),
            round_trips: backend.and_then(Backend::round_trips),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            outputs,
            result,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        tracing::info!(
            command = %manifest.command,
            calls = manifest.call_count,
            wall_time_s = manifest.wall_time_s,
            manifest = %path.display(),
            "done"
        );
        Ok(manifest)
    }
}
