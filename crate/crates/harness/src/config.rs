//! Run configuration files.
//!
//! A run is described by one TOML document. Unknown keys anywhere are
//! errors, so a misspelt ablation knob fails loudly instead of silently
//! running the default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use urm_core::config::PuzzleEmbeddingMode;
use urm_core::{ModelConfig, OptimConfig};
use urm_tasks::DatasetSpec;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; generated there on first use. Without it the
    /// dataset is generated in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub spec: DatasetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    /// Train on randomly symmetry-augmented instances.
    #[serde(default = "default_true")]
    pub augment: bool,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    #[serde(default)]
    pub eval_every: u64,
    /// Number of ranked candidates per instance (pass@n).
    #[serde(default = "default_one")]
    pub eval_n: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Evaluate the EMA shadow rather than the raw weights.
    #[serde(default = "default_true")]
    pub eval_ema: bool,
    /// Write a checkpoint every this many steps; 0 writes only at the end.
    #[serde(default)]
    pub checkpoint_every: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

fn default_eval_batch() -> usize {
    64
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(vec![e.to_string()]))
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.steps == 0 {
            v.push("steps must be positive".into());
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            v.push("batch sizes must be positive".into());
        }
        if self.eval_n == 0 {
            v.push("eval_n must be at least 1".into());
        }
        if self.data.spec.max_len() > self.model.max_seq_len {
            v.push(format!(
                "dataset sequences of length {} exceed model.max_seq_len {}",
                self.data.spec.max_len(),
                self.model.max_seq_len
            ));
        }
        v.extend(self.model.violations().into_iter().map(|m| format!("model: {m}")));
        v.extend(self.optim.violations().into_iter().map(|m| format!("optim: {m}")));
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(v))
        }
    }

    /// The model configuration with the puzzle table sized for `ids`
    /// distinct instances (or families).
    pub fn effective_model(&self, ids: usize) -> ModelConfig {
        let mut m = self.model.clone();
        m.puzzle_count = match m.puzzle_embedding {
            PuzzleEmbeddingMode::PerInstance => m.puzzle_count.max(ids),
            PuzzleEmbeddingMode::PerFamily => m.puzzle_count.max(urm_tasks::TaskFamily::ALL.len()),
            PuzzleEmbeddingMode::Off => m.puzzle_count,
        };
        m
    }
}
