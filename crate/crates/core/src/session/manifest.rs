use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::model::AngleSetting;

pub const MANIFEST_SCHEMA: &str = "strobe.manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Recording damaged; never accumulated.
    Glitched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub index: usize,
    pub setting: usize,
    pub angles: AngleSetting,
    /// Tag files of A and B, relative to the manifest.
    pub files: [PathBuf; 2],
    pub seed: u64,
    /// Start and end in session time, seconds.
    pub span: [f64; 2],
    pub n_pulses: usize,
    pub status: RunStatus,
}

/// Record of one simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub session_id: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunEntry>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            session_id: config.session_id(),
            config: config.clone(),
            runs: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, super::PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| super::PipelineError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(super::PipelineError::Schema(m.schema));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), super::PipelineError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| super::PipelineError::io(path, e))
    }

    pub fn ok_runs(&self) -> impl Iterator<Item = &RunEntry> {
        self.runs.iter().filter(|r| r.status == RunStatus::Ok)
    }
}
