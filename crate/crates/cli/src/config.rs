//! The pipeline config file and its lock-file echo.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use umr_core::embed::TrainConfig;
use umr_core::enhance::VlmGatewayConfig;
use umr_core::eval::{AblationMode, EmbedderConfig};
use umr_core::synth::SynthConfig;

pub const LOCK_FILE: &str = "config.lock.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    pub enhanced_corpus: Option<PathBuf>,
    pub enhanced_queries: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub mode: AblationMode,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: AblationMode::Baseline,
            seed: 0,
        }
    }
}

/// Every section and field is optional; omitted values take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub gateway: VlmGatewayConfig,
    pub embedder: EmbedderConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let raw = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Writes the effective configuration into `out_dir`.
    pub fn write_lock(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("cannot create {}", out_dir.display()))?;
        let path = out_dir.join(LOCK_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_defaults() {
        let c: PipelineConfig =
            serde_json::from_str(r#"{"train": {"epochs": 2}, "synth": {"seed": 9}}"#).unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.synth.seed, 9);
        assert_eq!(c.embedder, EmbedderConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"train": {"lr": 1}}"#).is_err());
    }

    #[test]
    fn lock_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = PipelineConfig::default();
        c.eval.mode = AblationMode::Full;
        c.write_lock(dir.path()).unwrap();
        let back = PipelineConfig::load(Some(&dir.path().join(LOCK_FILE))).unwrap();
        assert_eq!(back, c);
    }
}
