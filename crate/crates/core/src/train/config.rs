use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::model::{Fusion, Supervision};
use crate::train::mixup::MixupConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    PretrainConditional,
    TrainDetection,
    JointFinetune,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::PretrainConditional, Stage::TrainDetection, Stage::JointFinetune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::PretrainConditional => "pretrain-conditional",
            Stage::TrainDetection => "train-detection",
            Stage::JointFinetune => "joint-finetune",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Stage::JointFinetune => 1e-4,
            _ => 1e-3,
        }
    }

    pub fn default_epochs(self) -> usize {
        match self {
            Stage::PretrainConditional => 50,
            Stage::TrainDetection => 100,
            Stage::JointFinetune => 30,
        }
    }

    fn ordinal(self) -> u64 {
        self as u64
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub supervision: Supervision,
    pub fusion: Fusion,
    pub mixup: MixupConfig,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Longest reference excerpt fed to the conditional network while its
    /// weights train, in seconds. Shorter clips are used whole.
    pub reference_crop: f64,
    /// Decision rule for validation scoring.
    pub metrics: MetricsConfig,
}

impl TrainConfig {
    /// Defaults for `stage`.
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            learning_rate: stage.default_learning_rate(),
            epochs: stage.default_epochs(),
            batch_size: 32,
            seed: 0,
            supervision: Supervision::Strong,
            fusion: Fusion::Multiply,
            mixup: if stage == Stage::PretrainConditional {
                MixupConfig::off()
            } else {
                MixupConfig::default()
            },
            clip_norm: 5.0,
            reference_crop: 1.0,
            metrics: MetricsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.reference_crop > 0.0) {
            return Err(Error::Config(format!("reference crop must be positive, got {}", self.reference_crop)));
        }
        self.mixup.validate()?;
        self.metrics.validate()
    }

    /// Seed of the stage's random stream.
    pub(crate) fn stream_index(&self) -> u64 {
        self.stage.ordinal()
    }
}
