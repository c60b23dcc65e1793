//! JSON manifests describing finished runs and plans.
//!
//! Field order is the struct declaration order and never changes within a
//! manifest version.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_atomic, CheckpointError};

pub const MANIFEST_VERSION: u32 = 1;
pub const RUN_MANIFEST_FILE: &str = "manifest.json";

/// Main-line runs use [`RUN_MANIFEST_FILE`]; a branch gets its own file so
/// resuming into the same directory keeps the main line's manifest.
pub fn run_manifest_file(branch: Option<&str>) -> String {
    match branch {
        Some(b) => format!("manifest.{b}.json"),
        None => RUN_MANIFEST_FILE.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub agent_state: u64,
    pub checkin: u64,
    pub social_link: u64,
    pub ground_truth: u64,
}

impl From<[u64; 4]> for RecordCounts {
    fn from(c: [u64; 4]) -> Self {
        RecordCounts { agent_state: c[0], checkin: c[1], social_link: c[2], ground_truth: c[3] }
    }
}

impl From<RecordCounts> for [u64; 4] {
    fn from(c: RecordCounts) -> Self {
        [c.agent_state, c.checkin, c.social_link, c.ground_truth]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub params_path: Option<String>,
    pub params_hash: String,
    pub seed: u64,
    pub num_agents: u32,
    pub num_days: u32,
    pub params: Vec<ParamValue>,
    pub map_path: String,
    pub map_hash: Option<String>,
    pub anomalies_path: Option<String>,
    pub resumed_from: Option<String>,
    pub branch: Option<String>,
    /// True when a resumed run replaced the snapshot's anomaly schedule.
    pub anomalies_replaced: bool,
    pub out_dir: String,
    pub checkpoints: Vec<String>,
    pub ticks_executed: u64,
    pub agents_exited: u32,
    pub records: RecordCounts,
    pub init_secs: f64,
    pub sim_secs: f64,
    /// Seconds since the plan started.
    pub started_secs: f64,
    pub finished_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub manifest_version: u32,
    pub mode: String,
    pub parallel: usize,
    pub group_size: Option<usize>,
    pub runs: Vec<RunManifest>,
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest {path} is not valid: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ManifestError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| ManifestError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| match e {
        CheckpointError::Io { source, .. } => ManifestError::Io { path: path.display().to_string(), source },
        other => ManifestError::Io { path: path.display().to_string(), source: std::io::Error::other(other.to_string()) },
    })
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| ManifestError::Json { path: path.display().to_string(), source })
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        load_json(path)
    }
}

impl PlanManifest {
    pub fn save(&self, path: &Path) -> Result<(), ManifestError> {
        save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        load_json(path)
    }
}
