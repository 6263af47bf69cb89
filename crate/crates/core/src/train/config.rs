use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ScenarioSpec;
use crate::models::{Arch, ModelConfig, Scale};
use crate::nn::AdamConfig;
use crate::preprocess::{AugmentationPolicy, Orientation, SplitRatios};

/// Training run configuration. Every key has a default, so a TOML file
/// only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: Arch,
    pub scenario: ScenarioSpec,
    pub base_width: usize,
    pub depth: usize,
    pub scale: Scale,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Loss weight of a forest pixel.
    pub w_pos: f64,
    /// Loss weight of a non-forest pixel.
    pub w_neg: f64,
    pub seed: u64,
    /// Probability at or above which a pixel is called forest.
    pub threshold: f64,
    pub orientation: Orientation,
    /// Periods whose tiles are used; empty means all.
    pub periods: Vec<String>,
    pub split: SplitRatios,
    pub adam: AdamBetas,
    pub augmentation: AugmentationPolicy,
    pub manifest: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamBetas {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamBetas {
    fn default() -> Self {
        let d = AdamConfig::default();
        AdamBetas {
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Unet,
            scenario: ScenarioSpec::S1,
            base_width: 16,
            depth: 4,
            scale: Scale::Desk,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 50,
            w_pos: 0.3,
            w_neg: 0.7,
            seed: 0,
            threshold: 0.5,
            orientation: Orientation::AsPrinted,
            periods: Vec::new(),
            split: SplitRatios::default(),
            adam: AdamBetas::default(),
            augmentation: AugmentationPolicy::default(),
            manifest: None,
            run_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.w_pos + self.w_neg - 1.0).abs() > 1e-9 || self.w_pos < 0.0 || self.w_neg < 0.0 {
            return Err(Error::Config(format!(
                "class weights must be non-negative and sum to 1, got w_pos {} and w_neg {}",
                self.w_pos, self.w_neg
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        self.augmentation.validate()?;
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            arch: self.arch,
            in_channels: self.scenario.arity(),
            base_width: self.base_width,
            depth: self.depth,
            seed: self.seed,
            scale: self.scale,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam.beta1,
            beta2: self.adam.beta2,
            eps: self.adam.eps,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad training config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
