use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StageLog;
use crate::error::{Error, Result};

/// Everything needed to re-run a command deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_hash: String,
    /// Content hashes of the input datasets, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub partition: Option<String>,
    pub checkpoints: BTreeMap<String, String>,
    pub epoch_losses: Vec<StageLog>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            code_hash: crate::CODE_HASH.to_string(),
            inputs: BTreeMap::new(),
            partition: None,
            checkpoints: BTreeMap::new(),
            epoch_losses: Vec::new(),
            notes: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Per-epoch metrics as CSV.
pub fn history_csv(history: &[StageLog]) -> String {
    let mut s = String::from("stage,epoch,objective,steps,mean_loss,masked_fraction\n");
    for h in history {
        let _ = writeln!(s, "{},{},{},{},{:.6},{:.6}", h.stage, h.epoch, h.objective, h.steps, h.mean_loss, h.masked_fraction);
    }
    s
}
