//! The three optimisation stages: conditional pretraining, detection
//! training with a frozen conditional network, and joint fine-tuning.

use std::collections::HashMap;

use ndarray::{s, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetMode;
use crate::error::{Error, Result};
use crate::eval::{embed_reference, evaluate_split, reference_embeddings};
use crate::model::{ConditionalEmbedding, ForwardOptions, ModelState, NetworkBuilder, Supervision};
use crate::nn::adam::clip_global_norm;
use crate::nn::norm::BatchStats;
use crate::nn::{ops, Adam, AdamConfig, Graph, Var};
use crate::rng::{purpose, stream, Rng};
use crate::train::config::{Stage, TrainConfig};
use crate::train::data::{par_map, ClipData, SampleData, SplitData};
use crate::train::loss::{classification_loss, clip_bce_loss, frame_bce_loss, total_loss, LossBreakdown};
use crate::train::mixup::{mixup_pair, mixup_ratio, MixSample};

/// One optimisation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub stage: Stage,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_sed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_cls: Option<f64>,
    pub l_total: f64,
    pub lr: f64,
}

/// End-of-epoch summary with the validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub steps: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    /// `accuracy`, `segment_F` or `clip_F`.
    pub metric: String,
    pub validation: f64,
    pub best: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out += &serde_json::to_string(it).expect("record serialises");
        out.push('\n');
    }
    out
}

impl TrainLog {
    pub fn steps_jsonl(&self) -> String {
        jsonl(&self.steps)
    }

    pub fn epochs_jsonl(&self) -> String {
        jsonl(&self.epochs)
    }
}

/// Result of a stage.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State of the best validation epoch.
    pub best: ModelState,
    pub last: ModelState,
    pub optimizer: Adam,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Validation score of the initial state (detection stages only).
    pub initial_metric: Option<f64>,
}

/// Called after every epoch with the epoch summary, the current state and
/// the optimiser, e.g. to write checkpoints.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord, &ModelState, &Adam) -> Result<()> + 'a;

fn no_hook(_: &EpochRecord, _: &ModelState, _: &Adam) -> Result<()> {
    Ok(())
}

/// A hook that does nothing.
pub fn ignore_epochs() -> Box<EpochHook<'static>> {
    Box::new(no_hook)
}

struct Optimiser {
    adam: Adam,
    clip_norm: f64,
    trainable: fn(&str) -> bool,
}

impl Optimiser {
    fn new(cfg: &TrainConfig, trainable: fn(&str) -> bool) -> Self {
        Self {
            adam: Adam::new(AdamConfig {
                lr: cfg.learning_rate,
                ..AdamConfig::default()
            }),
            clip_norm: cfg.clip_norm,
            trainable,
        }
    }

    fn step(&mut self, state: &mut ModelState, g: &Graph, loss: Var, bn: &[(String, BatchStats)]) -> Result<()> {
        let mut grads = g.backward(loss).params()?;
        let trainable = self.trainable;
        grads.retain(|k, _| trainable(k));
        clip_global_norm(&mut grads, self.clip_norm);
        self.adam.update(&mut state.params, &grads, trainable);
        state.apply_bn_stats(bn);
        Ok(())
    }
}

fn conditional_only(name: &str) -> bool {
    ModelState::is_conditional(name)
}

fn detection_only(name: &str) -> bool {
    ModelState::is_detection(name)
}

fn everything(_: &str) -> bool {
    true
}

fn check_loss(step: u64, stage: Stage, b: &LossBreakdown) -> Result<()> {
    if b.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{stage} step {step}: non-finite loss {b:?}")))
    }
}

fn check_stage(cfg: &TrainConfig, expected: Stage) -> Result<()> {
    cfg.validate()?;
    if cfg.stage != expected {
        return Err(Error::Config(format!("configuration is for stage {}, not {expected}", cfg.stage)));
    }
    Ok(())
}

fn category_index(state: &ModelState, category: &str) -> Result<usize> {
    state.config.category_index(category).ok_or_else(|| {
        Error::Config(format!(
            "category `{category}` is absent from the classification head ({})",
            state.config.categories.join(", ")
        ))
    })
}

/// Reference frames covering `seconds`, never fewer than the network minimum.
pub fn reference_crop_frames(state: &ModelState, seconds: f64, reference_fps: f64) -> usize {
    let min = 1 << state.config.conditional_channels.len();
    ((seconds * reference_fps).round() as usize).max(min)
}

/// Random equal-length excerpts of `refs`, at most `max_frames` long.
fn crop_batch(refs: &[&Array2<f64>], max_frames: usize, rng: &mut Rng) -> Array3<f64> {
    let len = refs.iter().map(|r| r.nrows()).min().unwrap_or(0).min(max_frames);
    let d = refs.first().map(|r| r.ncols()).unwrap_or(0);
    let mut out = Array3::<f64>::zeros((refs.len(), len, d));
    for (k, r) in refs.iter().enumerate() {
        let start = rng.random_range(0..=r.nrows() - len);
        out.index_axis_mut(Axis(0), k).assign(&r.slice(s![start..start + len, ..]));
    }
    out
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn classification_accuracy(state: &ModelState, clips: &[ClipData]) -> Result<f64> {
    if clips.is_empty() {
        return Ok(0.0);
    }
    let hits = par_map(clips, |c| {
        let mut g = Graph::new();
        let r = g.constant(c.features.as_ref().clone().insert_axis(Axis(0)).into_dyn());
        let mut nb = NetworkBuilder::new(state, ForwardOptions::eval());
        let out = nb.conditional(&mut g, r)?;
        let logits = g.value(out.logits).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        Ok((argmax(logits.row(0)) == category_index(state, &c.category)?) as usize)
    })?;
    Ok(hits.iter().sum::<usize>() as f64 / clips.len() as f64)
}

fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Trains the conditional network on reference-clip classification.
/// Every step sees random excerpts of `reference_crop` seconds.
pub fn pretrain_conditional(
    init: ModelState,
    train: &[ClipData],
    validation: &[ClipData],
    cfg: &TrainConfig,
    reference_fps: f64,
    on_epoch: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::PretrainConditional)?;
    if train.is_empty() {
        return Err(Error::Data("no training clips for conditional pretraining".into()));
    }
    let targets: Vec<usize> = train
        .iter()
        .map(|c| category_index(&init, &c.category))
        .collect::<Result<_>>()?;
    for c in validation {
        category_index(&init, &c.category)?;
    }
    let crop = reference_crop_frames(&init, cfg.reference_crop, reference_fps);
    let mut rng = stream(cfg.seed, purpose::TRAIN, cfg.stream_index());
    let mut state = init;
    let mut opt = Optimiser::new(cfg, conditional_only);
    let options = ForwardOptions {
        train_conditional: true,
        train_detection: false,
        conditional_batch_stats: true,
        detection_batch_stats: false,
    };
    let mut log = TrainLog::default();
    let mut best = (state.clone(), 0, f64::NEG_INFINITY);
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut hits, mut steps) = (0.0, 0usize, 0usize);
        for batch in batches(train.len(), cfg.batch_size, &mut rng) {
            let refs: Vec<&Array2<f64>> = batch.iter().map(|&i| train[i].features.as_ref()).collect();
            let x = crop_batch(&refs, crop, &mut rng);
            let y: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let xv = g.constant(x.into_dyn());
            let mut nb = NetworkBuilder::new(&state, options);
            let out = nb.conditional(&mut g, xv)?;
            let loss = classification_loss(&mut g, out.logits, &y);
            let l = g.scalar(loss);
            let logits = g.value(out.logits).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
            hits += y.iter().enumerate().filter(|&(k, &t)| argmax(logits.row(k)) == t).count();
            let bd = LossBreakdown {
                l_sed: 0.0,
                l_cls: Some(l),
                l_total: l,
            };
            check_loss(step, cfg.stage, &bd)?;
            let bn = nb.take_bn_stats();
            opt.step(&mut state, &g, loss, &bn)?;
            log.steps.push(StepRecord {
                step,
                epoch,
                stage: cfg.stage,
                alpha: 0.0,
                lambda: None,
                l_sed: None,
                l_cls: Some(l),
                l_total: l,
                lr: cfg.learning_rate,
            });
            loss_sum += l;
            steps += 1;
            step += 1;
        }
        state.check_finite()?;
        let val = classification_accuracy(&state, validation)?;
        let is_best = val > best.2;
        if is_best {
            best = (state.clone(), epoch, val);
        }
        let rec = EpochRecord {
            epoch,
            stage: cfg.stage,
            steps,
            mean_loss: loss_sum / steps.max(1) as f64,
            train_accuracy: Some(hits as f64 / train.len() as f64),
            metric: "accuracy".into(),
            validation: val,
            best: is_best,
        };
        log::info!(
            "{} epoch {epoch}: loss {:.4}, train acc {:.3}, validation acc {val:.3}",
            cfg.stage,
            rec.mean_loss,
            rec.train_accuracy.unwrap_or(0.0)
        );
        on_epoch(&rec, &state, &opt.adam)?;
        log.epochs.push(rec);
    }
    Ok(TrainOutcome {
        best: best.0,
        last: state,
        optimizer: opt.adam,
        log,
        best_epoch: best.1,
        best_metric: best.2,
        initial_metric: None,
    })
}

fn check_detection_inputs(state: &ModelState, train: &SplitData, validation: &SplitData, cfg: &TrainConfig) -> Result<()> {
    if state.config.fusion != cfg.fusion {
        return Err(Error::Config(format!(
            "configured fusion {:?} differs from the initial state's {:?}",
            cfg.fusion, state.config.fusion
        )));
    }
    for data in [train, validation] {
        let weak = data.mode == DatasetMode::Weak;
        match (cfg.supervision, weak) {
            (Supervision::Strong, true) => {
                return Err(Error::Config(format!(
                    "strong supervision requested but the {} manifest is weakly labelled",
                    data.split
                )))
            }
            (Supervision::Weak, false) => {
                return Err(Error::Config(format!(
                    "weak supervision requested but the {} manifest is {}",
                    data.split,
                    data.mode.name()
                )))
            }
            _ => {}
        }
    }
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Data("detection training needs non-empty train and validation splits".into()));
    }
    if cfg.supervision == Supervision::Strong {
        if let Some(s) = train.samples.iter().find(|s| s.frame_labels.is_none()) {
            return Err(Error::Data(format!("sample `{}` has no frame labels", s.sample_id)));
        }
    }
    Ok(())
}

fn as_mix_sample(s: &SampleData, supervision: Supervision) -> MixSample {
    MixSample {
        mixture: s.mixture.as_ref().clone(),
        reference: s.reference.as_ref().clone(),
        labels: match supervision {
            Supervision::Strong => s.frame_labels.clone().expect("checked above"),
            Supervision::Weak => vec![s.clip_label],
        },
    }
}

/// Detection training with a frozen conditional network.
pub fn train_detection(
    init: ModelState,
    train: &SplitData,
    validation: &SplitData,
    cfg: &TrainConfig,
    on_epoch: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::TrainDetection)?;
    fit_detection(init, train, validation, cfg, None, on_epoch)
}

/// Fine-tunes both networks on detection plus reference classification.
pub fn joint_finetune(
    init: ModelState,
    train: &SplitData,
    validation: &SplitData,
    cfg: &TrainConfig,
    reference_fps: f64,
    on_epoch: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    check_stage(cfg, Stage::JointFinetune)?;
    fit_detection(init, train, validation, cfg, Some(reference_fps), on_epoch)
}

/// Shared loop of the two detection stages. `joint` carries the reference
/// frame rate when the conditional network trains too.
fn fit_detection(
    init: ModelState,
    train: &SplitData,
    validation: &SplitData,
    cfg: &TrainConfig,
    joint: Option<f64>,
    on_epoch: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    check_detection_inputs(&init, train, validation, cfg)?;
    let class_targets: Vec<usize> = match joint {
        Some(_) => train
            .samples
            .iter()
            .map(|s| category_index(&init, &s.target_category))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let crop = joint.map(|fps| reference_crop_frames(&init, cfg.reference_crop, fps));
    let metric_name = match cfg.supervision {
        Supervision::Strong => "segment_F",
        Supervision::Weak => "clip_F",
    };
    let initial = evaluate_split(&init, validation, &cfg.metrics, cfg.supervision)?.selection_metric();
    log::info!("{} initial validation {metric_name} {initial:.4}", cfg.stage);

    // Frozen conditional network: one embedding per reference clip.
    let cached: HashMap<String, ConditionalEmbedding> = match joint {
        None => reference_embeddings(&init, train)?,
        Some(_) => HashMap::new(),
    };
    let options = ForwardOptions {
        train_conditional: joint.is_some(),
        train_detection: true,
        // While its weights adapt, the conditional network keeps the
        // normalisation statistics it was pretrained with.
        conditional_batch_stats: false,
        detection_batch_stats: true,
    };
    let mut opt = Optimiser::new(cfg, if joint.is_some() { everything } else { detection_only });
    let mut rng = stream(cfg.seed, purpose::TRAIN, cfg.stream_index());
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = per_epoch * cfg.epochs;
    let mut state = init;
    let mut log = TrainLog::default();
    let mut best: Option<(ModelState, usize, f64)> = None;
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for batch in batches(train.len(), cfg.batch_size, &mut rng) {
            let n = batch.len();
            let alpha = mixup_ratio(step as usize, total_steps, &cfg.mixup);
            let mixed = rng.random::<f64>() < alpha;
            let (lambda, partner) = if mixed {
                let lam = cfg.mixup.sample_lambda(&mut rng);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                (Some(lam), perm)
            } else {
                (None, (0..n).collect())
            };

            let members: Vec<&SampleData> = batch.iter().map(|&i| &train.samples[i]).collect();
            let samples: Vec<MixSample> = match lambda {
                Some(lam) => (0..n)
                    .map(|k| {
                        mixup_pair(
                            &as_mix_sample(members[k], cfg.supervision),
                            &as_mix_sample(members[partner[k]], cfg.supervision),
                            lam,
                        )
                    })
                    .collect::<Result<_>>()?,
                None => members.iter().map(|s| as_mix_sample(s, cfg.supervision)).collect(),
            };

            let t = samples.iter().map(|s| s.mixture.nrows()).min().unwrap();
            let f = samples[0].mixture.ncols();
            let mut mix = Array3::<f64>::zeros((n, t, f));
            for (k, s) in samples.iter().enumerate() {
                mix.index_axis_mut(Axis(0), k).assign(&s.mixture.slice(s![..t, ..]));
            }

            let mut g = Graph::new();
            let mix_v = g.constant(mix.into_dyn());
            let mut nb = NetworkBuilder::new(&state, options);
            let (embedding, logits) = match crop {
                Some(max_frames) => {
                    let refs: Vec<&Array2<f64>> = samples.iter().map(|s| &s.reference).collect();
                    let r = g.constant(crop_batch(&refs, max_frames, &mut rng).into_dyn());
                    let out = nb.conditional(&mut g, r)?;
                    (out.embedding, Some(out.logits))
                }
                None => {
                    let embs: Vec<ConditionalEmbedding> = match lambda {
                        Some(_) => par_map(&samples, |s| embed_reference(&state, &s.reference))?,
                        None => members.iter().map(|s| cached[&s.reference_id].clone()).collect(),
                    };
                    let e = state.config.embedding_dim;
                    let flat: Vec<f64> = embs.iter().flat_map(|v| v.0.iter().copied()).collect();
                    (g.constant(Array2::from_shape_vec((n, e), flat).unwrap().into_dyn()), None)
                }
            };
            let out = nb.detection(&mut g, mix_v, embedding, cfg.supervision)?;
            let l_sed = match cfg.supervision {
                Supervision::Strong => {
                    let mut y = Array2::<f64>::zeros((n, t));
                    for (k, s) in samples.iter().enumerate() {
                        y.row_mut(k).assign(&ndarray::ArrayView1::from(&s.labels[..t]));
                    }
                    frame_bce_loss(&mut g, out.frame_probs, &y)
                }
                Supervision::Weak => {
                    let y: Vec<f64> = samples.iter().map(|s| s.labels[0]).collect();
                    clip_bce_loss(&mut g, out.clip_probs.expect("weak head"), &y)
                }
            };
            let (loss, breakdown) = match logits {
                Some(logits) => {
                    let own: Vec<usize> = batch.iter().map(|&i| class_targets[i]).collect();
                    let l_cls = match lambda {
                        Some(lam) => {
                            let other: Vec<usize> = partner.iter().map(|&k| own[k]).collect();
                            let a = ops::softmax_cross_entropy(&mut g, logits, &own);
                            let b = ops::softmax_cross_entropy(&mut g, logits, &other);
                            let mixed = ops::lerp(&mut g, a, b, lam);
                            ops::mean_all(&mut g, mixed)
                        }
                        None => classification_loss(&mut g, logits, &own),
                    };
                    let total = total_loss(&mut g, l_sed, l_cls);
                    let bd = LossBreakdown {
                        l_sed: g.scalar(l_sed),
                        l_cls: Some(g.scalar(l_cls)),
                        l_total: g.scalar(total),
                    };
                    (total, bd)
                }
                None => (l_sed, LossBreakdown::sed_only(g.scalar(l_sed))),
            };
            check_loss(step, cfg.stage, &breakdown)?;
            let bn = nb.take_bn_stats();
            opt.step(&mut state, &g, loss, &bn)?;
            log.steps.push(StepRecord {
                step,
                epoch,
                stage: cfg.stage,
                alpha,
                lambda,
                l_sed: Some(breakdown.l_sed),
                l_cls: breakdown.l_cls,
                l_total: breakdown.l_total,
                lr: cfg.learning_rate,
            });
            loss_sum += breakdown.l_total;
            steps += 1;
            step += 1;
        }
        state.check_finite()?;
        let val = evaluate_split(&state, validation, &cfg.metrics, cfg.supervision)?.selection_metric();
        let is_best = best.as_ref().is_none_or(|b| val > b.2);
        if is_best {
            best = Some((state.clone(), epoch, val));
        }
        let rec = EpochRecord {
            epoch,
            stage: cfg.stage,
            steps,
            mean_loss: loss_sum / steps.max(1) as f64,
            train_accuracy: None,
            metric: metric_name.into(),
            validation: val,
            best: is_best,
        };
        log::info!("{} epoch {epoch}: loss {:.4}, validation {metric_name} {val:.4}", cfg.stage, rec.mean_loss);
        on_epoch(&rec, &state, &opt.adam)?;
        log.epochs.push(rec);
    }
    let (best_state, best_epoch, best_metric) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best: best_state,
        last: state,
        optimizer: opt.adam,
        log,
        best_epoch,
        best_metric,
        initial_metric: Some(initial),
    })
}
