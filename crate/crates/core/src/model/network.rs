//! Graph construction for the conditional and detection networks.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::model::config::Fusion;
use crate::model::state::ModelState;
use crate::nn::gru::{bigru, GruWeights};
use crate::nn::norm::{batch_norm2d, BatchStats};
use crate::nn::{conv, ops, pool, Graph, Tensor, Var};

/// Which head supervises the detection network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    Strong,
    Weak,
}

/// Fixed-length summary of a reference clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalEmbedding(pub Vec<f64>);

impl ConditionalEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub frame_probs: Vec<f64>,
    pub clip_prob: Option<f64>,
}

/// Per-network switches for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub train_conditional: bool,
    pub train_detection: bool,
    /// Batch statistics (true) or running statistics (false).
    pub conditional_batch_stats: bool,
    pub detection_batch_stats: bool,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            train_conditional: false,
            train_detection: false,
            conditional_batch_stats: false,
            detection_batch_stats: false,
        }
    }
}

pub struct ConditionalVars {
    /// `[N, E]`
    pub embedding: Var,
    /// `[N, K]`
    pub logits: Var,
}

pub struct DetectionVars {
    /// `[N, T]`
    pub frame_probs: Var,
    /// `[N]`, weak head only.
    pub clip_probs: Option<Var>,
}

/// Registers parameters on a graph on demand and tracks batch statistics.
pub struct NetworkBuilder<'s> {
    state: &'s ModelState,
    options: ForwardOptions,
    vars: HashMap<String, Var>,
    bn_stats: Vec<(String, BatchStats)>,
}

impl<'s> NetworkBuilder<'s> {
    pub fn new(state: &'s ModelState, options: ForwardOptions) -> Self {
        Self {
            state,
            options,
            vars: HashMap::new(),
            bn_stats: Vec::new(),
        }
    }

    /// Batch statistics recorded so far, for the running-average update.
    pub fn take_bn_stats(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.bn_stats)
    }

    fn param(&mut self, g: &mut Graph, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let trainable = if ModelState::is_conditional(name) {
            self.options.train_conditional
        } else {
            self.options.train_detection
        };
        let v = g.param(name, self.state.params.expect(name), trainable);
        self.vars.insert(name.to_string(), v);
        v
    }

    fn bn(&mut self, g: &mut Graph, x: Var, prefix: &str, batch_stats: bool) -> Var {
        let gamma = self.param(g, &format!("{prefix}.gamma"));
        let beta = self.param(g, &format!("{prefix}.beta"));
        let (rm, rv) = self.state.running(prefix);
        let (y, stats) = batch_norm2d(g, x, gamma, beta, &rm, &rv, batch_stats);
        if let Some(s) = stats {
            self.bn_stats.push((prefix.to_string(), s));
        }
        y
    }

    /// Per-feature-bin normalisation of `[N, T, D]` input frames.
    fn input_norm(&mut self, g: &mut Graph, x: Var, prefix: &str, batch_stats: bool) -> Var {
        let s = g.value(x).shape().to_vec();
        let (n, t, d) = (s[0], s[1], s[2]);
        let y = ops::permute(g, x, &[0, 2, 1]);
        let y = ops::reshape(g, y, &[n, d, t, 1]);
        let y = self.bn(g, y, prefix, batch_stats);
        let y = ops::reshape(g, y, &[n, d, t]);
        ops::permute(g, y, &[0, 2, 1])
    }

    fn linear(&mut self, g: &mut Graph, x: Var, prefix: &str) -> Var {
        let w = self.param(g, &format!("{prefix}.weight"));
        let b = self.param(g, &format!("{prefix}.bias"));
        ops::linear(g, x, w, b)
    }

    /// Minimum reference frame count accepted by the conditional network.
    pub fn conditional_min_frames(&self) -> usize {
        1 << self.state.config.conditional_channels.len()
    }

    /// `refs [N, T, D]` to embedding and class logits.
    pub fn conditional(&mut self, g: &mut Graph, refs: Var) -> Result<ConditionalVars> {
        let cfg = &self.state.config;
        let shape = g.value(refs).shape().to_vec();
        if shape.len() != 3 || shape[2] != cfg.reference_dims {
            return Err(Error::Shape(format!(
                "reference batch must be [N, T, {}], got {shape:?}",
                cfg.reference_dims
            )));
        }
        let min = self.conditional_min_frames();
        if shape[1] < min {
            return Err(Error::TooShort(format!(
                "reference has {} frames; the conditional network needs at least {min}",
                shape[1]
            )));
        }
        let blocks = cfg.conditional_channels.len();
        let batch_stats = self.options.conditional_batch_stats;
        let x = self.input_norm(g, refs, "cond.bn_in", batch_stats);
        let mut x = ops::reshape(g, x, &[shape[0], 1, shape[1], shape[2]]);
        for b in 0..blocks {
            for k in 0..2 {
                let p = format!("cond.block{b}.conv{k}");
                let w = self.param(g, &format!("{p}.weight"));
                let bias = self.param(g, &format!("{p}.bias"));
                x = conv::conv2d(g, x, w, bias);
                x = self.bn(g, x, &format!("cond.block{b}.bn{k}"), batch_stats);
                x = ops::relu(g, x);
            }
            x = pool::avg_pool2d(g, x, 2, 2);
        }
        let gmax = pool::global_max(g, x);
        let gmean = pool::global_mean(g, x);
        let pooled = ops::add(g, gmax, gmean);
        let embedding = self.linear(g, pooled, "cond.embed");
        let logits = self.linear(g, pooled, "cond.cls");
        Ok(ConditionalVars { embedding, logits })
    }

    /// `mix [N, T, F]` and `embedding [N, E]` to per-frame probabilities.
    pub fn detection(
        &mut self,
        g: &mut Graph,
        mix: Var,
        embedding: Var,
        supervision: Supervision,
    ) -> Result<DetectionVars> {
        let cfg = self.state.config.clone();
        let shape = g.value(mix).shape().to_vec();
        if shape.len() != 3 || shape[2] != cfg.mixture_mels {
            return Err(Error::Shape(format!(
                "mixture batch must be [N, T, {}], got {shape:?}",
                cfg.mixture_mels
            )));
        }
        let es = g.value(embedding).shape().to_vec();
        if es != [shape[0], cfg.embedding_dim] {
            return Err(Error::Shape(format!(
                "embedding batch must be [{}, {}], got {es:?}",
                shape[0], cfg.embedding_dim
            )));
        }
        let (n, t) = (shape[0], shape[1]);
        let reduction = cfg.time_reduction();
        if t < reduction {
            return Err(Error::TooShort(format!(
                "mixture has {t} frames; time pooling needs at least {reduction}"
            )));
        }

        let batch_stats = self.options.detection_batch_stats;
        let mix = self.input_norm(g, mix, "det.bn_in", batch_stats);
        let frames = match cfg.fusion {
            Fusion::Concat => ops::concat_broadcast(g, mix, embedding),
            Fusion::Multiply => mix,
        };
        let width = cfg.detection_input_width();
        let mut x = ops::reshape(g, frames, &[n, 1, t, width]);
        for l in 0..cfg.detection_channels.len() {
            let w = self.param(g, &format!("det.conv{l}.weight"));
            let b = self.param(g, &format!("det.conv{l}.bias"));
            x = conv::conv2d(g, x, w, b);
            x = self.bn(g, x, &format!("det.bn{l}"), batch_stats);
            x = ops::leaky_relu(g, x, cfg.leaky_slope);
            let (tp, fp) = (cfg.detection_time_pool[l], cfg.detection_freq_pool[l]);
            if tp > 1 || fp > 1 {
                x = pool::avg_pool2d(g, x, tp, fp);
            }
        }
        let s = g.value(x).shape().to_vec();
        let (c, tr, fr) = (s[1], s[2], s[3]);
        let x = ops::permute(g, x, &[0, 2, 1, 3]);
        let feat = c * fr;
        let mut x = ops::reshape(g, x, &[n, tr, feat]);

        if cfg.fusion == Fusion::Multiply {
            let flat = ops::reshape(g, x, &[n * tr, feat]);
            let proj = self.linear(g, flat, "det.fuse.time");
            let proj = ops::reshape(g, proj, &[n, tr, cfg.fusion_width]);
            let e = self.linear(g, embedding, "det.fuse.embed");
            x = ops::mul_broadcast(g, proj, e);
        }

        let mut weights = |dir: &str| GruWeights {
            w_ih: self.param(g, &format!("det.gru.{dir}.w_ih")),
            w_hh: self.param(g, &format!("det.gru.{dir}.w_hh")),
            b_ih: self.param(g, &format!("det.gru.{dir}.b_ih")),
            b_hh: self.param(g, &format!("det.gru.{dir}.b_hh")),
        };
        let (fwd, bwd) = (weights("fwd"), weights("bwd"));
        let h = bigru(g, x, fwd, bwd);
        let width = 2 * cfg.gru_hidden;
        let h = ops::reshape(g, h, &[n * tr, width]);
        let h = self.linear(g, h, "det.fc1");
        let h = ops::leaky_relu(g, h, cfg.leaky_slope);
        let h = self.linear(g, h, "det.fc2");
        let p = ops::sigmoid(g, h);
        // Per-frame layers commute with nearest-neighbour upsampling, so the
        // heads run at the pooled rate and only probabilities are stretched.
        let p = ops::reshape(g, p, &[n, tr, 1]);
        let p = ops::upsample_time(g, p, reduction, t);
        let frame_probs = ops::reshape(g, p, &[n, t]);
        let clip_probs = match supervision {
            Supervision::Strong => None,
            Supervision::Weak => Some(ops::linear_softmax_pool(g, frame_probs)),
        };
        Ok(DetectionVars {
            frame_probs,
            clip_probs,
        })
    }
}

fn batch_of_one(values: &Array2<f64>) -> Tensor {
    values.clone().insert_axis(Axis(0)).into_dyn()
}

/// Embedding and class probabilities for one reference, running statistics.
pub fn conditional_forward(reference: &FeatureMatrix, state: &ModelState) -> Result<(ConditionalEmbedding, Vec<f64>)> {
    if reference.kind != FeatureKind::LogMelMfcc {
        return Err(Error::InvalidArgument(format!(
            "conditional network expects log-mel+MFCC features, got {:?}",
            reference.kind
        )));
    }
    let mut g = Graph::new();
    let r = g.constant(batch_of_one(&reference.values));
    let mut nb = NetworkBuilder::new(state, ForwardOptions::eval());
    let out = nb.conditional(&mut g, r)?;
    let embedding = g.value(out.embedding).iter().copied().collect();
    let logits = g
        .value(out.logits)
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .unwrap();
    let probs = ops::softmax_rows(&logits).row(0).to_vec();
    Ok((ConditionalEmbedding(embedding), probs))
}

/// Frame probabilities (and the pooled clip probability in weak mode) for
/// one mixture, running statistics.
pub fn detection_forward(
    mix: &FeatureMatrix,
    embedding: &ConditionalEmbedding,
    state: &ModelState,
    supervision: Supervision,
) -> Result<DetectionOutput> {
    if mix.kind != FeatureKind::LogMel {
        return Err(Error::InvalidArgument(format!(
            "detection network expects log-mel features, got {:?}",
            mix.kind
        )));
    }
    let mut g = Graph::new();
    let m = g.constant(batch_of_one(&mix.values));
    let e = g.constant(
        Array2::from_shape_vec((1, embedding.dim()), embedding.0.clone())
            .unwrap()
            .into_dyn(),
    );
    let mut nb = NetworkBuilder::new(state, ForwardOptions::eval());
    let out = nb.detection(&mut g, m, e, supervision)?;
    let frame_probs: Vec<f64> = g.value(out.frame_probs).iter().copied().collect();
    let clip_prob = out.clip_probs.map(|v| g.value(v)[[0]]);
    if let Some(pc) = clip_prob {
        let lo = frame_probs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = frame_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        debug_assert!(lo - 1e-12 <= pc && pc <= hi + 1e-12, "pooled {pc} outside [{lo}, {hi}]");
    }
    Ok(DetectionOutput {
        frame_probs,
        clip_prob,
    })
}

/// Clip probability from frame probabilities: `sum p^2 / sum p`, zero when
/// every frame is zero.
pub fn linear_softmax_pool(frame_probs: &[f64]) -> f64 {
    ops::linear_softmax_value(frame_probs)
}
