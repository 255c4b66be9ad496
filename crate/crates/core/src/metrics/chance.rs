//! Chance-level references for the segment F-measure.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::segment::{binarize, f_measure, segment_tabulate, Event, MetricsConfig, SegmentCounts};
use crate::rng::{purpose, stream};

/// One scored clip: its category, reference events, length and frame grid.
pub struct ChanceItem<'a> {
    pub category: &'a str,
    pub reference: &'a [Event],
    pub duration: f64,
    pub frames: usize,
    pub fps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceLevel {
    /// Mean macro F of the random-probability model.
    pub monte_carlo: f64,
    pub runs: usize,
    /// Macro F of predicting every segment active, from label priors alone.
    pub all_active: f64,
}

/// Macro F of the model that marks every segment active.
pub fn all_active_f(items: &[ChanceItem], segment_length: f64) -> f64 {
    let mut counts = SegmentCounts::new(segment_length);
    for it in items {
        let everything = [Event {
            onset: 0.0,
            offset: it.duration,
        }];
        counts.add(it.category, segment_tabulate(&everything, it.reference, it.duration, segment_length));
    }
    f_measure(&counts).1
}

/// Scores a model emitting i.i.d. uniform frame probabilities, averaged
/// over `runs` draws, next to the all-active reference.
pub fn chance_level(items: &[ChanceItem], cfg: &MetricsConfig, runs: usize, seed: u64) -> ChanceLevel {
    let mut total = 0.0;
    for run in 0..runs {
        let mut rng = stream(seed, purpose::CHANCE, run as u64);
        let mut counts = SegmentCounts::new(cfg.segment_length);
        for it in items {
            let probs: Vec<f64> = (0..it.frames).map(|_| rng.random::<f64>()).collect();
            let pred = binarize(&probs, it.fps, cfg);
            counts.add(it.category, segment_tabulate(&pred, it.reference, it.duration, cfg.segment_length));
        }
        total += f_measure(&counts).1;
    }
    ChanceLevel {
        monte_carlo: if runs == 0 { 0.0 } else { total / runs as f64 },
        runs,
        all_active: all_active_f(items, cfg.segment_length),
    }
}
