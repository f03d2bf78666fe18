use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basin::{BasinCurve, SweepReport, Verdict};
use crate::error::{Error, Result};
use crate::markov::EntropyEstimate;
use crate::weak_star::{FamilySpec, MomentVector};

use super::config::ExperimentConfig;

/// Where and how a record was produced; floating results may differ across stamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentStamp {
    pub tool_version: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl EnvironmentStamp {
    pub fn current() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub started_at: String,
    pub finished_at: String,
    pub environment: EnvironmentStamp,
    pub family: FamilySpec,
    pub target_moments: Option<MomentVector>,
    pub sweep: Option<SweepReport>,
    pub verdict: Option<Verdict>,
    pub unstable_integral: Option<f64>,
    pub entropy: Option<EntropyEstimate>,
    /// `a − (h − ∫ψ)` with `a` the slope at the smallest ε.
    pub residual: Option<f64>,
    /// `h − ∫ψ`.
    pub pesin_defect: Option<f64>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub stage_errors: Vec<StageError>,
}

impl ExperimentRecord {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingRecord(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn curves(&self) -> Vec<&BasinCurve> {
        self.sweep
            .iter()
            .flat_map(|s| s.entries.iter().map(|e| &e.curve))
            .collect()
    }

    pub fn checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// 0 when everything ran and every expectation held, 2 when an
    /// expectation failed, 1 when a stage errored.
    pub fn exit_code(&self) -> i32 {
        if !self.stage_errors.is_empty() {
            1
        } else if !self.checks_pass() {
            2
        } else {
            0
        }
    }
}
