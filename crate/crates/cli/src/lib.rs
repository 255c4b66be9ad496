//! Experiment orchestration for the `tsdnet` binary: configuration,
//! experiment directories and one driver per subcommand.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod open_domain;

use tsdnet_core::corpus::DatasetMode;
use tsdnet_core::model::Fusion;
use tsdnet_core::train::MixupMode;
use tsdnet_core::Result;

use config::ExperimentConfig;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<DatasetMode>,
    pub fusion: Option<Fusion>,
    pub mixup: Option<MixupMode>,
    pub segment_length: Option<f64>,
}

impl Overrides {
    /// Applies the overrides and re-validates. A seed sets both the corpus
    /// and the training seed.
    pub fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(s) = self.seed {
            cfg.corpus.seed = s;
            cfg.training.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.corpus.mode = m;
        }
        if let Some(f) = self.fusion {
            cfg.model.fusion = f;
        }
        if let Some(m) = self.mixup {
            cfg.training.mixup.mode = m;
        }
        if let Some(l) = self.segment_length {
            cfg.evaluation.segment_length = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for a failed command: the core error class when there is
/// one, otherwise a data error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    err.chain()
        .find_map(|e| e.downcast_ref::<tsdnet_core::Error>())
        .map(tsdnet_core::Error::exit_code)
        .unwrap_or(3)
}
