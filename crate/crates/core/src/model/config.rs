use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How the conditional embedding enters the detection network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Embedding appended to every input frame, before the conv stack.
    Concat,
    /// Pointwise projections of conv features and embedding, multiplied.
    Multiply,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(Fusion::Concat),
            "multiply" => Ok(Fusion::Multiply),
            other => Err(Error::Config(format!("unknown fusion `{other}` (concat | multiply)"))),
        }
    }
}

/// Architecture of both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Class names of the conditional classification head, in logit order.
    pub categories: Vec<String>,
    pub embedding_dim: usize,
    pub reference_dims: usize,
    pub mixture_mels: usize,
    /// Output channels of the conditional conv blocks (two convs each).
    pub conditional_channels: Vec<usize>,
    pub detection_channels: Vec<usize>,
    pub detection_time_pool: Vec<usize>,
    pub detection_freq_pool: Vec<usize>,
    pub gru_hidden: usize,
    pub fc_hidden: usize,
    pub fusion: Fusion,
    /// Width of the multiplicative fusion projections.
    pub fusion_width: usize,
    pub leaky_slope: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Full-size architecture.
    pub fn full(categories: Vec<String>) -> Self {
        Self {
            categories,
            embedding_dim: 128,
            reference_dims: 84,
            mixture_mels: 64,
            conditional_channels: vec![64, 128, 256, 512],
            detection_channels: vec![32, 64, 128, 128],
            detection_time_pool: vec![1, 2, 2, 1],
            detection_freq_pool: vec![2, 2, 2, 2],
            gru_hidden: 128,
            fc_hidden: 256,
            fusion: Fusion::Multiply,
            fusion_width: 128,
            leaky_slope: 0.1,
            bn_momentum: 0.1,
        }
    }

    /// Narrow variant for single-core desk runs; same topology.
    pub fn desk(categories: Vec<String>) -> Self {
        Self {
            conditional_channels: vec![4, 8, 16, 32],
            detection_channels: vec![4, 8, 16, 16],
            // Pooling time first keeps full-resolution activations small.
            detection_time_pool: vec![2, 2, 1, 1],
            gru_hidden: 32,
            fc_hidden: 64,
            ..Self::full(categories)
        }
    }

    /// Very small variant for finite-difference checks.
    pub fn tiny(categories: Vec<String>, mixture_mels: usize) -> Self {
        Self {
            mixture_mels,
            embedding_dim: 6,
            fusion_width: 5,
            conditional_channels: vec![2, 2, 2, 2],
            detection_channels: vec![2, 2, 2, 2],
            detection_time_pool: vec![1, 1, 1, 1],
            detection_freq_pool: vec![2, 2, 1, 1],
            gru_hidden: 3,
            fc_hidden: 4,
            ..Self::full(categories)
        }
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    /// Total time downsampling of the detection conv stack.
    pub fn time_reduction(&self) -> usize {
        self.detection_time_pool.iter().product()
    }

    /// Width of the frames entering the detection conv stack.
    pub fn detection_input_width(&self) -> usize {
        match self.fusion {
            Fusion::Concat => self.mixture_mels + self.embedding_dim,
            Fusion::Multiply => self.mixture_mels,
        }
    }

    /// Frequency bins left after the detection conv stack.
    pub fn detection_freq_out(&self) -> usize {
        self.detection_freq_pool
            .iter()
            .fold(self.detection_input_width(), |f, &p| f / p)
    }

    /// Per-frame feature width after flattening channels and frequency.
    pub fn detection_feature_width(&self) -> usize {
        self.detection_channels.last().copied().unwrap_or(1) * self.detection_freq_out()
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.detection_channels.len();
        if self.categories.is_empty() {
            return Err(Error::Config("model needs at least one category".into()));
        }
        if self.conditional_channels.is_empty() || layers == 0 {
            return Err(Error::Config("conv stacks must be non-empty".into()));
        }
        if self.detection_time_pool.len() != layers || self.detection_freq_pool.len() != layers {
            return Err(Error::Config(format!(
                "detection pooling lists must have {layers} entries"
            )));
        }
        if self.detection_time_pool.iter().chain(&self.detection_freq_pool).any(|&p| p == 0) {
            return Err(Error::Config("pool factors must be positive".into()));
        }
        if self.detection_freq_out() == 0 {
            return Err(Error::Config(format!(
                "frequency pooling {:?} exhausts {} input bins",
                self.detection_freq_pool,
                self.detection_input_width()
            )));
        }
        if self.reference_dims >> self.conditional_channels.len() == 0 {
            return Err(Error::Config("reference feature width too small for conditional pooling".into()));
        }
        if self.embedding_dim == 0 || self.gru_hidden == 0 || self.fc_hidden == 0 || self.fusion_width == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Stable digest of the architecture.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
