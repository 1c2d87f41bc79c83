//! One TOML file drives a whole run: dataset generation, model shape, and
//! training. Unknown keys are rejected; missing sections fall back to the
//! desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::dataset::DatasetSpec;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::BlockVariant;

    #[test]
    fn default_roundtrips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        let cfg = Config::default();
        cfg.save(&path).unwrap();
        let back = Config::load(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            "seed = 9\n[model]\nvariant = \"a2v_only\"\n[train]\nsteps = 7\n",
        )
        .unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.variant, BlockVariant::A2vOnly);
        assert_eq!(cfg.model.dim, ModelConfig::default().dim);
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.dataset, DatasetSpec::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "sead = 9\n").unwrap();
        assert!(Config::load(&path).is_err());
        std::fs::write(&path, "[model]\ndims = 8\n").unwrap();
        assert!(Config::load(&path).is_err());
        std::fs::write(&path, "[train.optim]\nlr_fast = 0.1\n").unwrap();
        assert!(Config::load(&path).is_err());
    }

    #[test]
    fn nested_optimizer_overrides_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, "[train.optim]\nlr_slow = 0.001\nlr_new = 0.001\n").unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.train.optim.lr_slow, 1e-3);
        assert_eq!(cfg.train.optim.lr_new, 1e-3);
        assert_eq!(cfg.train.optim.beta1, 0.9);
    }
}
