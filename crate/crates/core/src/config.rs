//! Pipeline configuration: one JSON document holding the suite, model and
//! training settings, plus named dataset presets.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::patchify::PatchConfig;
use crate::suite::SuiteConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub suite: SuiteConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the initial parameters.
    pub model_seed: u64,
}

/// Dataset-regime presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetPreset {
    /// Three sphere levels 192×8, 64×32, 32×64 and local defects.
    Shapenet,
    /// As `Shapenet`, with four normal templates per class.
    Real3d,
    /// Levels 64×32, 32×64, 8×192 and planar/angular shifts enabled.
    Industrial,
}

impl FromStr for DatasetPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shapenet" => Ok(Self::Shapenet),
            "real3d" => Ok(Self::Real3d),
            "industrial" => Ok(Self::Industrial),
            _ => Err(Error::InvalidConfig(format!("unknown preset {s}"))),
        }
    }
}

pub const REAL3D_TEMPLATES: usize = 4;

impl PipelineConfig {
    pub fn preset(preset: DatasetPreset) -> Self {
        let mut config = Self::default();
        match preset {
            DatasetPreset::Shapenet => {}
            DatasetPreset::Real3d => config.suite.train_per_class = REAL3D_TEMPLATES,
            DatasetPreset::Industrial => {
                config.model.patch = PatchConfig::industrial(config.model.patch.seed);
                config.suite.rigid_shifts = true;
                config.train.rigid_shifts = true;
            }
        }
        config
    }

    /// Fields missing from the file keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// One seed drives every random stream of the pipeline.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.suite.seed = seed;
        self.train.seed = seed;
        self.model.patch.seed = seed;
        self.model_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.suite.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn industrial_patch_numbers() {
        let c = PipelineConfig::preset(DatasetPreset::Industrial);
        let counts: Vec<usize> = c.model.patch.levels.iter().map(|l| l.count).collect();
        assert_eq!(counts, [64, 32, 8]);
        assert!(c.train.rigid_shifts && c.suite.rigid_shifts);
        let s = PipelineConfig::preset(DatasetPreset::Shapenet);
        let counts: Vec<usize> = s.model.patch.levels.iter().map(|l| l.count).collect();
        assert_eq!(counts, [192, 64, 32]);
        assert!("nope".parse::<DatasetPreset>().is_err());
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"train": {"epochs": 7}, "suite": {"points": 512}}"#).unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.steps_per_epoch, TrainConfig::default().steps_per_epoch);
        assert_eq!(c.suite.points, 512);
        assert_eq!(c.model, ModelConfig::default());
        fs::write(&path, r#"{"train": {"epochs": 0}}"#).unwrap();
        assert!(matches!(PipelineConfig::load(&path), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn round_trip() {
        let c = PipelineConfig::preset(DatasetPreset::Real3d).with_seed(9);
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
