//! Dataset-level scoring of a trained model.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{binarize, chance_level, f_measure, segment_tabulate, ChanceItem, ChanceLevel, Counts, MetricsConfig, SegmentCounts};
use crate::model::{ConditionalEmbedding, ForwardOptions, ModelState, NetworkBuilder, Supervision};
use crate::nn::Graph;
use crate::train::{SampleData, SplitData};

/// Mixtures per forward pass during evaluation.
const EVAL_BATCH: usize = 32;

/// Per-category segment counts and F.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    #[serde(rename = "F")]
    pub f: f64,
}

/// Clip-level detection scores (weak supervision).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipLevel {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    #[serde(rename = "F")]
    pub f: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: String,
    pub checkpoint_hash: String,
    pub supervision: Supervision,
    pub samples: usize,
    pub segment_length: f64,
    pub threshold: f64,
    pub median_window: usize,
    pub per_category: BTreeMap<String, CategoryScore>,
    #[serde(rename = "macro_F")]
    pub macro_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_level: Option<ClipLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chance: Option<ChanceLevel>,
}

impl EvalReport {
    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} [{}] {} samples, {:.2} s segments",
            self.dataset, self.split, self.samples, self.segment_length
        );
        let _ = writeln!(out, "{:<16} {:>6} {:>6} {:>6} {:>7}", "category", "tp", "fp", "fn", "F");
        for (cat, s) in &self.per_category {
            let _ = writeln!(out, "{:<16} {:>6} {:>6} {:>6} {:>6.1}%", cat, s.tp, s.fp, s.fn_, 100.0 * s.f);
        }
        let _ = writeln!(out, "{:<16} {:>28.1}%", "macro", 100.0 * self.macro_f);
        if let Some(c) = &self.clip_level {
            let _ = writeln!(out, "{:<16} {:>28.1}%  (accuracy {:.1}%)", "clip-level F", 100.0 * c.f, 100.0 * c.accuracy);
        }
        if let Some(c) = &self.chance {
            let _ = writeln!(out, "{:<16} {:>28.1}%  ({} runs)", "chance", 100.0 * c.monte_carlo, c.runs);
        }
        out
    }

    /// The metric used for model selection under `supervision`.
    pub fn selection_metric(&self) -> f64 {
        match (self.supervision, &self.clip_level) {
            (Supervision::Weak, Some(c)) => c.f,
            _ => self.macro_f,
        }
    }
}

/// Frame probabilities (and clip probabilities under weak supervision) of
/// every sample, in order.
pub struct Predictions {
    pub frame_probs: Vec<Vec<f64>>,
    pub clip_probs: Option<Vec<f64>>,
}

/// Embeddings of every distinct reference, keyed by reference id.
pub fn reference_embeddings(state: &ModelState, data: &SplitData) -> Result<HashMap<String, ConditionalEmbedding>> {
    let mut seen = HashMap::new();
    let mut unique = Vec::new();
    for s in &data.samples {
        if !seen.contains_key(&s.reference_id) {
            seen.insert(s.reference_id.clone(), ());
            unique.push(s);
        }
    }
    let embs = crate::train::par_map(&unique, |s| embed_reference(state, &s.reference))?;
    Ok(unique.iter().map(|s| s.reference_id.clone()).zip(embs).collect())
}

/// Embedding of one reference matrix with running statistics.
pub fn embed_reference(state: &ModelState, reference: &Array2<f64>) -> Result<ConditionalEmbedding> {
    let mut g = Graph::new();
    let r = g.constant(reference.clone().insert_axis(Axis(0)).into_dyn());
    let mut nb = NetworkBuilder::new(state, ForwardOptions::eval());
    let out = nb.conditional(&mut g, r)?;
    Ok(ConditionalEmbedding(g.value(out.embedding).iter().copied().collect()))
}

/// Runs the detection network over `samples` with the given embeddings.
pub fn predict_with(
    state: &ModelState,
    samples: &[&SampleData],
    embeddings: &[&ConditionalEmbedding],
    supervision: Supervision,
) -> Result<Predictions> {
    // Group equal-length mixtures so each batch is a dense tensor.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by_key(|&i| samples[i].mixture.nrows());
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match batches.last_mut() {
            Some(b) if b.len() < EVAL_BATCH && samples[b[0]].mixture.nrows() == samples[i].mixture.nrows() => b.push(i),
            _ => batches.push(vec![i]),
        }
    }
    let results = crate::train::par_map(&batches, |batch| {
        let (t, f) = samples[batch[0]].mixture.dim();
        let e = state.config.embedding_dim;
        let mut mix = Array3::<f64>::zeros((batch.len(), t, f));
        let mut emb = Array2::<f64>::zeros((batch.len(), e));
        for (k, &i) in batch.iter().enumerate() {
            mix.index_axis_mut(Axis(0), k).assign(&samples[i].mixture);
            if embeddings[i].dim() != e {
                return Err(Error::Shape(format!("embedding has {} dims, model expects {e}", embeddings[i].dim())));
            }
            emb.row_mut(k).assign(&ndarray::ArrayView1::from(&embeddings[i].0));
        }
        let mut g = Graph::new();
        let m = g.constant(mix.into_dyn());
        let ev = g.constant(emb.into_dyn());
        let mut nb = NetworkBuilder::new(state, ForwardOptions::eval());
        let out = nb.detection(&mut g, m, ev, supervision)?;
        let probs = g.value(out.frame_probs).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        let clip = out.clip_probs.map(|v| g.value(v).iter().copied().collect::<Vec<f64>>());
        Ok(batch
            .iter()
            .enumerate()
            .map(|(k, &i)| (i, probs.row(k).to_vec(), clip.as_ref().map(|c| c[k])))
            .collect::<Vec<_>>())
    })?;
    let mut frame_probs = vec![Vec::new(); samples.len()];
    let mut clip_probs = vec![0.0; samples.len()];
    for (i, p, c) in results.into_iter().flatten() {
        frame_probs[i] = p;
        if let Some(c) = c {
            clip_probs[i] = c;
        }
    }
    Ok(Predictions {
        frame_probs,
        clip_probs: (supervision == Supervision::Weak).then_some(clip_probs),
    })
}

/// Predictions for a whole split, embedding each reference once.
pub fn predict_split(state: &ModelState, data: &SplitData, supervision: Supervision) -> Result<Predictions> {
    let embs = reference_embeddings(state, data)?;
    let samples: Vec<&SampleData> = data.samples.iter().collect();
    let e: Vec<&ConditionalEmbedding> = data.samples.iter().map(|s| &embs[&s.reference_id]).collect();
    predict_with(state, &samples, &e, supervision)
}

/// Segment counts (and clip-level counts when clip probabilities are
/// given) of `predictions` against the split's labels.
pub fn score(
    data: &SplitData,
    predictions: &Predictions,
    cfg: &MetricsConfig,
    supervision: Supervision,
    checkpoint_hash: &str,
) -> Result<EvalReport> {
    cfg.validate()?;
    if predictions.frame_probs.len() != data.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} samples",
            predictions.frame_probs.len(),
            data.len()
        )));
    }
    let mut counts = SegmentCounts::new(cfg.segment_length);
    for (s, probs) in data.samples.iter().zip(&predictions.frame_probs) {
        let reference = s.reference_events().ok_or_else(|| {
            Error::Data(format!(
                "sample `{}` has no frame labels; segment scoring needs a validation or test split",
                s.sample_id
            ))
        })?;
        let pred = binarize(probs, s.fps, cfg);
        counts.add(&s.target_category, segment_tabulate(&pred, &reference, s.duration, cfg.segment_length));
    }
    let (per_f, macro_f) = f_measure(&counts);
    let per_category = counts
        .per_category
        .iter()
        .map(|(cat, c)| {
            (
                cat.clone(),
                CategoryScore {
                    tp: c.tp,
                    fp: c.fp,
                    fn_: c.fn_,
                    f: per_f.get(cat).copied().unwrap_or(0.0),
                },
            )
        })
        .collect();
    let clip_level = predictions.clip_probs.as_ref().map(|clip| {
        let mut c = Counts::default();
        let mut tn = 0;
        for (s, &p) in data.samples.iter().zip(clip) {
            match (p > cfg.threshold, s.clip_label > 0.5) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        ClipLevel {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn,
            f: c.f(),
            accuracy: (c.tp + tn) as f64 / data.len().max(1) as f64,
        }
    });
    Ok(EvalReport {
        dataset: data.root.display().to_string(),
        split: data.split.name().to_string(),
        checkpoint_hash: checkpoint_hash.to_string(),
        supervision,
        samples: data.len(),
        segment_length: cfg.segment_length,
        threshold: cfg.threshold,
        median_window: cfg.median_window,
        per_category,
        macro_f,
        clip_level,
        chance: None,
    })
}

/// Runs the model over a split and scores it.
pub fn evaluate_split(
    state: &ModelState,
    data: &SplitData,
    cfg: &MetricsConfig,
    supervision: Supervision,
) -> Result<EvalReport> {
    let predictions = predict_split(state, data, supervision)?;
    score(data, &predictions, cfg, supervision, &state.config_hash())
}

/// Monte-Carlo level of a model emitting i.i.d. uniform frame probabilities.
pub fn split_chance(data: &SplitData, cfg: &MetricsConfig, runs: usize, seed: u64) -> Result<ChanceLevel> {
    let refs: Vec<Vec<crate::metrics::Event>> = data
        .samples
        .iter()
        .map(|s| {
            s.reference_events()
                .ok_or_else(|| Error::Data(format!("sample `{}` has no frame labels", s.sample_id)))
        })
        .collect::<Result<_>>()?;
    let items: Vec<ChanceItem> = data
        .samples
        .iter()
        .zip(&refs)
        .map(|(s, r)| ChanceItem {
            category: &s.target_category,
            reference: r,
            duration: s.duration,
            frames: s.mixture.nrows(),
            fps: s.fps,
        })
        .collect();
    Ok(chance_level(&items, cfg, runs, seed))
}
