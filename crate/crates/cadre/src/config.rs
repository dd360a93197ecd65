//! Experiment configuration: one JSON file drives generation, training,
//! extraction, and evaluation.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::dgp::DgpConfig;
use crate::error::{CadreError, Result};
use crate::objective::TrainConfig;

/// Evaluation options.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalConfig {
    /// Threshold override for extraction; falls back to `train.tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Seed of the deterministic train/test split inside the kernel R2.
    #[serde(default)]
    pub split_seed: u64,
    /// CSV with `x,y,u,v` rows giving node positions and wind vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind_file: Option<PathBuf>,
    /// Displacement multiplier for the wind surrogate graph.
    #[serde(default = "one")]
    pub wind_step_scale: f64,
    /// CSV with one column: the physical target signal for the SMCC.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_file: Option<PathBuf>,
    #[serde(default = "one_usize")]
    pub smcc_subset: usize,
    /// Build a SAR mask from dataset coordinates before extraction.
    #[serde(default)]
    pub use_sar_mask: bool,
    #[serde(default = "default_radius")]
    pub sar_radius: f64,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_radius() -> f64 {
    50.0
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: None,
            split_seed: 0,
            wind_file: None,
            wind_step_scale: 1.0,
            target_file: None,
            smcc_subset: 1,
            use_sar_mask: false,
            sar_radius: 50.0,
        }
    }
}

/// Full description of one experiment sweep.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Seeds swept by `experiment`; each seed reseeds both the generator
    /// and the estimator.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            seeds: default_seeds(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(CadreError::InvalidConfig("seed list is empty".into()));
        }
        if self.eval.smcc_subset == 0 {
            return Err(CadreError::InvalidConfig("smcc_subset must be positive".into()));
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical JSON; identifies a run record.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}
