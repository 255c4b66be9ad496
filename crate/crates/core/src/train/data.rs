//! Manifest loading and feature extraction for training and evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{manifest_path, read_manifest, ClipBank, DatasetMode, Polarity, Split};
use crate::dsp::{
    load_wav, mixture_features_with, reference_features_with, MixtureFeatureConfig, ReferenceFeatureConfig,
};
use crate::error::{Error, Result};
use crate::metrics::{events_from_labels, Event};

/// Both front ends.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSettings {
    pub mixture: MixtureFeatureConfig,
    pub reference: ReferenceFeatureConfig,
}

/// One manifest record with its features loaded.
#[derive(Debug, Clone)]
pub struct SampleData {
    pub sample_id: String,
    pub mixture_id: String,
    pub reference_id: String,
    pub target_category: String,
    pub polarity: Polarity,
    /// `[T, mels]`
    pub mixture: Arc<Array2<f64>>,
    /// `[T_ref, mels + mfcc]`
    pub reference: Arc<Array2<f64>>,
    pub frame_labels: Option<Vec<f64>>,
    pub clip_label: f64,
    pub fps: f64,
    pub duration: f64,
}

impl SampleData {
    /// Reference events of the target, from the frame labels.
    pub fn reference_events(&self) -> Option<Vec<Event>> {
        let labels = self.frame_labels.as_ref()?;
        let active: Vec<bool> = labels.iter().map(|&v| v > 0.5).collect();
        let mut events = events_from_labels(&active, self.fps);
        for e in &mut events {
            e.offset = e.offset.min(self.duration);
        }
        Some(events)
    }
}

/// All samples of one split.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub root: PathBuf,
    pub split: Split,
    pub mode: DatasetMode,
    pub samples: Vec<SampleData>,
}

impl SplitData {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Distinct target categories, sorted.
    pub fn categories(&self) -> Vec<String> {
        let mut c: Vec<String> = self.samples.iter().map(|s| s.target_category.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Keeps only samples accepted by `keep`.
    pub fn filter(&self, keep: impl Fn(&SampleData) -> bool) -> SplitData {
        SplitData {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            ..self.clone()
        }
    }
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(16)
}

/// Applies `f` to every item on a small worker pool; output order follows
/// input order, so results do not depend on the worker count.
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let n = workers().min(items.len()).max(1);
    let chunk = items.len().div_ceil(n).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("feature worker panicked")?);
        }
        Ok(out)
    })
}

fn load_features<F>(paths: Vec<PathBuf>, extract: F) -> Result<BTreeMap<PathBuf, Arc<Array2<f64>>>>
where
    F: Fn(&Path) -> Result<Array2<f64>> + Sync,
{
    let feats = par_map(&paths, |p| extract(p))?;
    Ok(paths.into_iter().zip(feats.into_iter().map(Arc::new)).collect())
}

/// Loads `manifests/<split>.jsonl` under `root` with features for every
/// mixture and reference.
pub fn load_split(root: &Path, split: Split, features: &FeatureSettings) -> Result<SplitData> {
    let records = read_manifest(&manifest_path(root, split))?;
    let mode = match records.first() {
        Some(r) => r.mode,
        None => return Err(Error::Data(format!("{split} manifest under {} is empty", root.display()))),
    };
    if let Some(r) = records.iter().find(|r| r.mode != mode) {
        return Err(Error::Data(format!("sample `{}` has mode {} in a {} manifest", r.sample_id, r.mode.name(), mode.name())));
    }

    let unique = |rel: &dyn Fn(&crate::corpus::ManifestRecord) -> &str| {
        let mut v: Vec<PathBuf> = records
            .iter()
            .map(|r| crate::corpus::ManifestRecord::resolve(root, rel(r)))
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let mixtures = load_features(unique(&|r| r.mixture_path.as_str()), |p| {
        Ok(mixture_features_with(&load_wav(p)?, &features.mixture)?.values)
    })?;
    let references = load_features(unique(&|r| r.reference_path.as_str()), |p| {
        Ok(reference_features_with(&load_wav(p)?, &features.reference)?.values)
    })?;

    let fps = features.mixture.base.frames_per_second();
    let mut samples = Vec::with_capacity(records.len());
    for r in &records {
        let mixture = mixtures[&crate::corpus::ManifestRecord::resolve(root, &r.mixture_path)].clone();
        if mixture.nrows() != r.frames {
            return Err(Error::Data(format!(
                "sample `{}`: manifest says {} frames, features have {}",
                r.sample_id,
                r.frames,
                mixture.nrows()
            )));
        }
        if (r.fps - fps).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "sample `{}` labelled at {} fps, features run at {fps}",
                r.sample_id, r.fps
            )));
        }
        let frame_labels = r
            .frame_labels(root)?
            .map(|l| l.into_iter().map(f64::from).collect::<Vec<f64>>());
        samples.push(SampleData {
            sample_id: r.sample_id.clone(),
            mixture_id: r.mixture_id.clone(),
            reference_id: r.reference_id.clone(),
            target_category: r.target_category.clone(),
            polarity: r.polarity,
            mixture,
            reference: references[&crate::corpus::ManifestRecord::resolve(root, &r.reference_path)].clone(),
            frame_labels,
            clip_label: r.clip_target(root)? as f64,
            fps: r.fps,
            duration: r.duration,
        });
    }
    Ok(SplitData {
        root: root.to_path_buf(),
        split,
        mode,
        samples,
    })
}

/// A bank clip with reference features, for classification pretraining.
#[derive(Debug, Clone)]
pub struct ClipData {
    pub id: String,
    pub category: String,
    pub features: Arc<Array2<f64>>,
}

/// Reference features of every clip of `split` in the bank.
pub fn load_bank_split(bank: &ClipBank, split: Split, features: &FeatureSettings) -> Result<Vec<ClipData>> {
    let part = bank.split(split);
    let rate = features.reference.base.sample_rate;
    let feats = par_map(&part.entries, |e| {
        Ok(reference_features_with(&e.load(rate)?, &features.reference)?.values)
    })?;
    Ok(part
        .entries
        .iter()
        .zip(feats)
        .map(|(e, f)| ClipData {
            id: e.id.clone(),
            category: e.category.clone(),
            features: Arc::new(f),
        })
        .collect())
}
