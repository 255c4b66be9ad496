//! Audio loading and the two feature front ends.
//!
//! The mixture branch produces 64-band log-mel frames at 50 frames per
//! second; the reference branch produces log-mel and MFCC frames
//! concatenated along the feature axis.

mod features;
mod mel;
mod resample;
mod stft;
mod wav;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{
    log_mel, mfcc_from_log_mel, mixture_features, mixture_features_with, reference_features,
    reference_features_with, FeatureConfig, MixtureFeatureConfig, ReferenceFeatureConfig,
};
pub use mel::{dct_ii_ortho, hz_to_mel, mel_filterbank, mel_to_hz};
pub use resample::resample;
pub use stft::{frame_count, hann_window, stft_magnitude};
pub use wav::{decode_wav, encode_wav, load_wav, write_wav, WavEncoding};

/// A mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        })
    }

    pub fn silence(len: usize, sample_rate: u32, source_id: impl Into<String>) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Root-mean-square over a half-open sample range.
    pub fn rms(&self, start: usize, end: usize) -> f64 {
        let end = end.min(self.samples.len());
        if start >= end {
            return 0.0;
        }
        let sum: f64 = self.samples[start..end].iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sum / (end - start) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    LogMel,
    Mfcc,
    LogMelMfcc,
}

/// Time-by-feature matrix with its frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub frames_per_second: f64,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }
}
