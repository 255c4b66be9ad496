use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{
    dct_ii_ortho, mel_filterbank, resample, stft_magnitude, AudioClip, FeatureKind, FeatureMatrix,
};
use crate::error::{Error, Result};

/// Shared STFT + mel settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper mel edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_eps: f64,
}

impl FeatureConfig {
    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    fn fmax(&self) -> f64 {
        self.fmax.unwrap_or(self.sample_rate as f64 / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFeatureConfig {
    #[serde(flatten)]
    pub base: FeatureConfig,
}

impl Default for MixtureFeatureConfig {
    fn default() -> Self {
        Self {
            base: FeatureConfig {
                sample_rate: 22050,
                window: 2048,
                hop: 441,
                n_mels: 64,
                fmin: 0.0,
                fmax: None,
                log_eps: 1e-10,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceFeatureConfig {
    #[serde(flatten)]
    pub base: FeatureConfig,
    pub n_mfcc: usize,
}

impl Default for ReferenceFeatureConfig {
    fn default() -> Self {
        Self {
            base: FeatureConfig {
                sample_rate: 44100,
                window: 400,
                hop: 200,
                n_mels: 64,
                fmin: 0.0,
                fmax: None,
                log_eps: 1e-10,
            },
            n_mfcc: 20,
        }
    }
}

impl ReferenceFeatureConfig {
    pub fn dims(&self) -> usize {
        self.base.n_mels + self.n_mfcc
    }
}

/// Log-mel power spectrogram, `frames x n_mels`.
pub fn log_mel(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Array2<f64>> {
    let clip = resample(clip, cfg.sample_rate)?;
    let mag = stft_magnitude(&clip, cfg.window, cfg.hop)?;
    let fb = mel_filterbank(cfg.sample_rate as f64, cfg.window, cfg.n_mels, cfg.fmin, cfg.fmax());
    let power = mag.mapv(|m| m * m);
    let mel = power.dot(&fb.t());
    Ok(mel.mapv(|v| (v + cfg.log_eps).ln()))
}

/// MFCCs from a log-mel matrix: DCT-II per frame, coefficient 0 kept.
pub fn mfcc_from_log_mel(log_mel: &Array2<f64>, n_mfcc: usize) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((log_mel.nrows(), n_mfcc));
    for (src, mut dst) in log_mel.rows().into_iter().zip(out.rows_mut()) {
        let row: Vec<f64> = src.iter().copied().collect();
        for (d, c) in dst.iter_mut().zip(dct_ii_ortho(&row, n_mfcc)) {
            *d = c;
        }
    }
    out
}

pub fn mixture_features(clip: &AudioClip) -> Result<FeatureMatrix> {
    mixture_features_with(clip, &MixtureFeatureConfig::default())
}

pub fn mixture_features_with(clip: &AudioClip, cfg: &MixtureFeatureConfig) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix {
        values: log_mel(clip, &cfg.base)?,
        frames_per_second: cfg.base.frames_per_second(),
        kind: FeatureKind::LogMel,
    })
}

pub fn reference_features(clip: &AudioClip) -> Result<FeatureMatrix> {
    reference_features_with(clip, &ReferenceFeatureConfig::default())
}

/// `[log-mel | MFCC]` frames for the conditional branch.
pub fn reference_features_with(clip: &AudioClip, cfg: &ReferenceFeatureConfig) -> Result<FeatureMatrix> {
    let resampled_len = (clip.samples.len() as f64 * cfg.base.sample_rate as f64
        / clip.sample_rate as f64)
        .round() as usize;
    if resampled_len < cfg.base.window {
        return Err(Error::TooShort(format!(
            "reference clip has {resampled_len} samples at {} Hz, shorter than the {}-sample window",
            cfg.base.sample_rate, cfg.base.window
        )));
    }
    let lm = log_mel(clip, &cfg.base)?;
    let mf = mfcc_from_log_mel(&lm, cfg.n_mfcc);
    Ok(FeatureMatrix {
        values: concatenate(Axis(1), &[lm.view(), mf.view()]).expect("row counts match"),
        frames_per_second: cfg.base.frames_per_second(),
        kind: FeatureKind::LogMelMfcc,
    })
}
