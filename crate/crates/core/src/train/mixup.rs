//! Mixup for (mixture, reference, label) triples and its schedule.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::lerp_values;

/// How often mixup is applied over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "ratio")]
pub enum MixupMode {
    Off,
    /// Constant application probability.
    Fixed(f64),
    /// Linear decay from `alpha_start` to `alpha_end`.
    Linear,
}

impl std::str::FromStr for MixupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "linear" => Ok(Self::Linear),
            _ => {
                let r = s
                    .strip_prefix("fixed:")
                    .and_then(|r| r.parse::<f64>().ok())
                    .filter(|r| (0.0..=1.0).contains(r))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "mixup must be `off`, `linear` or `fixed:<r>` with r in [0, 1], got `{s}`"
                        ))
                    })?;
                Ok(Self::Fixed(r))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixupConfig {
    pub mode: MixupMode,
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Both shape parameters of the symmetric Beta law for lambda.
    pub beta: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            mode: MixupMode::Linear,
            alpha_start: 0.3,
            alpha_end: 0.0,
            beta: 0.5,
        }
    }
}

impl MixupConfig {
    pub fn off() -> Self {
        Self {
            mode: MixupMode::Off,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.alpha_end && self.alpha_end <= self.alpha_start && self.alpha_start <= 1.0) {
            return Err(Error::Config(format!(
                "mixup requires 0 <= alpha_end <= alpha_start <= 1, got {} and {}",
                self.alpha_end, self.alpha_start
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("mixup beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    pub fn sample_lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Beta::new(self.beta, self.beta).expect("validated beta").sample(rng)
    }
}

/// Probability of mixing a batch at `step` of `total_steps`.
pub fn mixup_ratio(step: usize, total_steps: usize, cfg: &MixupConfig) -> f64 {
    match cfg.mode {
        MixupMode::Off => 0.0,
        MixupMode::Fixed(r) => r,
        MixupMode::Linear => {
            let frac = step.min(total_steps) as f64 / total_steps.max(1) as f64;
            cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * frac
        }
    }
}

/// Features and labels of one training sample. Strong samples carry one
/// label per mixture frame, weak samples a single clip label.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSample {
    pub mixture: Array2<f64>,
    pub reference: Array2<f64>,
    pub labels: Vec<f64>,
}

/// `lam * s1 + (1 - lam) * s2` for features and labels. Frame-aligned
/// inputs of different lengths are cropped to the shorter one first.
pub fn mixup_pair(s1: &MixSample, s2: &MixSample, lam: f64) -> Result<MixSample> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidArgument(format!("mixup lambda {lam} outside [0, 1]")));
    }
    let strong = s1.labels.len() == s1.mixture.nrows();
    let t = s1.mixture.nrows().min(s2.mixture.nrows());
    let tr = s1.reference.nrows().min(s2.reference.nrows());
    let crop = |m: &Array2<f64>, n: usize| m.slice(s![..n, ..]).to_owned().into_dyn();
    let (m1, m2) = (crop(&s1.mixture, t), crop(&s2.mixture, t));
    let (r1, r2) = (crop(&s1.reference, tr), crop(&s2.reference, tr));
    if m1.shape() != m2.shape() || r1.shape() != r2.shape() {
        return Err(Error::Shape(format!(
            "mixup feature widths differ: {:?} vs {:?}, {:?} vs {:?}",
            s1.mixture.dim(),
            s2.mixture.dim(),
            s1.reference.dim(),
            s2.reference.dim()
        )));
    }
    let label_len = if strong { t } else { s1.labels.len() };
    if s2.labels.len() < label_len || s1.labels.len() < label_len || (!strong && s2.labels.len() != label_len) {
        return Err(Error::Shape(format!(
            "mixup label lengths differ: {} vs {}",
            s1.labels.len(),
            s2.labels.len()
        )));
    }
    let labels = s1.labels[..label_len]
        .iter()
        .zip(&s2.labels[..label_len])
        .map(|(&a, &b)| match lam {
            1.0 => a,
            0.0 => b,
            _ => lam * a + (1.0 - lam) * b,
        })
        .collect();
    let to2 = |t: ndarray::ArrayD<f64>| t.into_dimensionality::<ndarray::Ix2>().unwrap();
    Ok(MixSample {
        mixture: to2(lerp_values(&m1, &m2, lam)),
        reference: to2(lerp_values(&r1, &r2, lam)),
        labels,
    })
}
