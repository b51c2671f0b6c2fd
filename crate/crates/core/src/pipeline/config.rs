//! Resolved pipeline configuration.
//!
//! One JSON file can configure every stage; each section is optional and
//! falls back to its documented defaults. Command-line flags override file
//! values, and the global `--seed` flag overrides every per-stage seed at
//! once.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SliceStrategy;
use crate::metrics::EvalConfig;
use crate::model::{ModelSpec, TrainConfig};
use crate::phantom::PhantomConfig;
use crate::volume::{AugmentConfig, CANONICAL_DIMS};

/// Preprocessing stage settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Output grid dimensions (1 mm isotropic, LPS).
    pub target_dims: [usize; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_dims: [CANONICAL_DIMS.0, CANONICAL_DIMS.1, CANONICAL_DIMS.2],
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "target_dims must be positive, got {:?}",
                self.target_dims
            )));
        }
        Ok(())
    }
}

/// Slice-extraction stage settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub strategy: SliceStrategy,
}

/// Strategy-comparison stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub strategies: Vec<SliceStrategy>,
    /// Permutations for each pairwise AUC test.
    pub n_perm: u32,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            strategies: vec![SliceStrategy::Feret, SliceStrategy::Martin, SliceStrategy::Area],
            n_perm: 1000,
        }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("compare needs at least one strategy".into()));
        }
        Ok(())
    }
}

/// Every stage's settings in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub phantom: PhantomConfig,
    pub preprocess: PreprocessConfig,
    pub extract: ExtractConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Training-time augmentation; `null` disables it.
    pub augment: Option<AugmentConfig>,
    pub eval: EvalConfig,
    pub compare: CompareConfig,
}

impl PipelineConfig {
    /// Reads a JSON config file; unknown keys at any level are rejected to
    /// catch typos.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.preprocess.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.compare.validate()?;
        Ok(())
    }

    /// Applies the global `--seed` override to every stage seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.phantom.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        if let Some(a) = &mut self.augment {
            a.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_files_fill_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"train": {"max_epochs": 7}, "extract": {"strategy": "martin"}}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.extract.strategy, SliceStrategy::Martin);
    }

    #[test]
    fn invalid_values_are_rejected_with_context() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"train": {"learning_rate": -1.0}}"#).unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
        std::fs::write(&path, r#"{"extract": {"strategy": "frobnicate"}}"#).unwrap();
        assert!(PipelineConfig::load(&path).is_err());
        std::fs::write(&path, r#"{"trian": {"max_epochs": 7}}"#).unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("trian"), "{err}");

        // Typos nested inside a section must not silently fall back to the
        // section defaults either.
        std::fs::write(&path, r#"{"train": {"learning_rte": 0.5}}"#).unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("learning_rte"), "{err}");
        std::fs::write(&path, r#"{"model": {"conv_filters": [4], "hidden": [8, 4]}}"#).unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("conv_filters"), "{err}");
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut cfg = PipelineConfig {
            augment: Some(AugmentConfig::default()),
            ..PipelineConfig::default()
        };
        cfg.override_seed(1234);
        assert_eq!(cfg.phantom.seed, 1234);
        assert_eq!(cfg.train.seed, 1234);
        assert_eq!(cfg.eval.seed, 1234);
        assert_eq!(cfg.augment.unwrap().seed, 1234);
    }
}
