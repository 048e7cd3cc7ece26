//! Experiment configuration file handling.
//!
//! A config file is JSON with three optional sections:
//!
//! ```json
//! {
//!   "env":   { "num_sps": 6, "tot_steps": 6, "thoughts_per_step": 6,
//!              "quality_threshold_pct": 0.8,
//!              "channel": { "bandwidth_hz": 2e6, "distance_unit": "km" } },
//!   "train": { "episodes": 1000, "k_steps": 5, "actor_q": "min" },
//!   "sweep": { "axis": "num_sps", "values": [4, 8],
//!              "seeds": [1, 2, 3], "policies": ["greedy_eft"] }
//! }
//! ```
//!
//! Every key has a default; unknown keys are rejected with the offending
//! name in the error message.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsac::TrainConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::harness::SweepSpec;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        Ok(())
    }
}
