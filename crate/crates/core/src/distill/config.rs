use serde::{Deserialize, Serialize};

use super::optim::OptimConfig;
use crate::aug::{MixSpec, PipelineSpec};
use crate::cache::ValuePrecision;
use crate::error::{Error, Result};

/// Everything that pins down a distillation run. The teacher pass and every
/// student replaying its cache must agree on `run_seed`, `k`, the pipeline
/// and the mix setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_seed: u64,
    pub epochs: u32,
    pub batch_size: usize,
    pub k: usize,
    pub temperature: f64,
    pub value_precision: ValuePrecision,
    /// `false` swaps the standard recipe for resize + normalize only.
    pub augment: bool,
    pub mix_enabled: bool,
    pub mix: MixSpec,
    /// Adds a ground-truth cross-entropy term to the student loss.
    pub use_ground_truth: bool,
    pub ground_truth_weight: f64,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_seed: 0,
            epochs: 10,
            batch_size: 32,
            k: 10,
            temperature: 1.0,
            value_precision: ValuePrecision::Half,
            augment: true,
            mix_enabled: false,
            mix: MixSpec::default(),
            use_ground_truth: false,
            ground_truth_weight: 1.0,
            optim: OptimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidRunConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.k == 0 {
            return Err(Error::KNotPositive);
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.ground_truth_weight >= 0.0) {
            return bad("ground_truth_weight must be non-negative");
        }
        Ok(())
    }

    /// The augmentation pipeline for `image_size` outputs from `source_size`
    /// corpus images.
    pub fn pipeline(&self, image_size: usize, source_size: (usize, usize)) -> PipelineSpec {
        let mut spec = if self.augment {
            PipelineSpec::standard(image_size, source_size)
        } else {
            PipelineSpec::identity(image_size, source_size)
        };
        spec.mix_enabled = self.mix_enabled;
        spec.mix = self.mix.clone();
        spec
    }

    pub fn steps_per_epoch(&self, num_samples: usize) -> u64 {
        num_samples.div_ceil(self.batch_size) as u64
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidRunConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}
