//! Experiment configuration: one TOML file with `dsp`, `corpus`, `model`,
//! `training` and `evaluation` sections. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tsdnet_core::corpus::{BuildConfig, DatasetMode, SoundscapeConfig, SplitSizes};
use tsdnet_core::metrics::MetricsConfig;
use tsdnet_core::model::{Fusion, ModelConfig, Supervision};
use tsdnet_core::train::{FeatureSettings, MixupConfig, Stage, TrainConfig};
use tsdnet_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub mode: DatasetMode,
    pub seed: u64,
    /// Ingestion manifest of a real clip bank; the synthetic bank is used
    /// when absent.
    pub bank_manifest: Option<PathBuf>,
    pub toy_categories: usize,
    pub toy_clips_per_category: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub soundscape: SoundscapeConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            mode: DatasetMode::StrongPlus,
            seed: 0,
            bank_manifest: None,
            toy_categories: 6,
            toy_clips_per_category: 24,
            train: 180,
            validation: 40,
            test: 40,
            soundscape: SoundscapeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub fusion: Fusion,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            fusion: Fusion::Multiply,
        }
    }
}

impl ModelSection {
    pub fn build(&self, categories: Vec<String>) -> ModelConfig {
        let base = match self.preset {
            Preset::Desk => ModelConfig::desk(categories),
            Preset::Full => ModelConfig::full(categories),
        };
        ModelConfig {
            fusion: self.fusion,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl StageSection {
    fn defaults(stage: Stage) -> Self {
        Self {
            learning_rate: stage.default_learning_rate(),
            epochs: stage.default_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub seed: u64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub reference_crop: f64,
    pub pretrain: StageSection,
    pub detection: StageSection,
    pub finetune: StageSection,
    pub mixup: MixupConfig,
    /// Mixup during joint fine-tuning as well.
    pub finetune_mixup: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 32,
            clip_norm: 5.0,
            reference_crop: 1.0,
            pretrain: StageSection::defaults(Stage::PretrainConditional),
            detection: StageSection::defaults(Stage::TrainDetection),
            finetune: StageSection::defaults(Stage::JointFinetune),
            mixup: MixupConfig::default(),
            finetune_mixup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub threshold: f64,
    pub median_window: usize,
    pub segment_length: f64,
    /// Random-model draws for the chance level; 0 disables it.
    pub chance_runs: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let m = MetricsConfig::default();
        Self {
            threshold: m.threshold,
            median_window: m.median_window,
            segment_length: m.segment_length,
            chance_runs: 20,
        }
    }
}

impl EvaluationSection {
    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            threshold: self.threshold,
            median_window: self.median_window,
            segment_length: self.segment_length,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dsp: FeatureSettings,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// `path` when given, else the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 over the canonical serialisation, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.soundscape.validate()?;
        if self.corpus.toy_categories < 2 {
            return Err(Error::Config("corpus.toy_categories must be at least 2".into()));
        }
        self.evaluation.metrics().validate()?;
        for stage in Stage::ALL {
            self.train_config(stage, Supervision::Strong).validate()?;
        }
        Ok(())
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig::new(
            self.corpus.mode,
            SplitSizes {
                train: self.corpus.train,
                validation: self.corpus.validation,
                test: self.corpus.test,
            },
            self.corpus.seed,
        )
        .with_soundscape(self.corpus.soundscape.clone())
    }

    pub fn train_config(&self, stage: Stage, supervision: Supervision) -> TrainConfig {
        let t = &self.training;
        let section = match stage {
            Stage::PretrainConditional => t.pretrain,
            Stage::TrainDetection => t.detection,
            Stage::JointFinetune => t.finetune,
        };
        let mixup = match stage {
            Stage::PretrainConditional => MixupConfig::off(),
            Stage::JointFinetune if !t.finetune_mixup => MixupConfig::off(),
            _ => t.mixup,
        };
        TrainConfig {
            stage,
            learning_rate: section.learning_rate,
            epochs: section.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            supervision,
            fusion: self.model.fusion,
            mixup,
            clip_norm: t.clip_norm,
            reference_crop: t.reference_crop,
            metrics: self.evaluation.metrics(),
        }
    }
}
