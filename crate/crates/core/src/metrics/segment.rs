use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision rule and segment length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub threshold: f64,
    /// Odd window, in frames; 1 disables filtering.
    pub median_window: usize,
    /// Seconds.
    pub segment_length: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            median_window: 5,
            segment_length: 1.0,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if self.median_window % 2 == 0 {
            return Err(Error::Config(format!("median window must be odd, got {}", self.median_window)));
        }
        if !(self.segment_length > 0.0) {
            return Err(Error::Config(format!(
                "segment length must be positive, got {}",
                self.segment_length
            )));
        }
        Ok(())
    }
}

/// `[onset, offset)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset: f64,
    pub offset: f64,
}

/// Running median with edge replication.
pub fn median_filter(x: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 || x.is_empty() {
        return x.to_vec();
    }
    let half = window / 2;
    let n = x.len() as isize;
    let mut buf = Vec::with_capacity(window);
    (0..n)
        .map(|i| {
            buf.clear();
            buf.extend((i - half as isize..=i + half as isize).map(|j| x[j.clamp(0, n - 1) as usize]));
            buf.sort_by(f64::total_cmp);
            buf[half]
        })
        .collect()
}

/// Maximal runs of active frames as events.
pub fn events_from_labels(active: &[bool], fps: f64) -> Vec<Event> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &a) in active.iter().chain(std::iter::once(&false)).enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(Event {
                    onset: s as f64 / fps,
                    offset: i as f64 / fps,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Median-filters, thresholds (strictly above) and merges runs into events.
pub fn binarize(frame_probs: &[f64], fps: f64, cfg: &MetricsConfig) -> Vec<Event> {
    let smoothed = median_filter(frame_probs, cfg.median_window);
    let active: Vec<bool> = smoothed.iter().map(|&p| p > cfg.threshold).collect();
    events_from_labels(&active, fps)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    /// `2tp / (2tp + fp + fn)`, zero when nothing is counted.
    pub fn f(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }

    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 { 0.0 } else { self.tp as f64 / d as f64 }
    }

    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 { 0.0 } else { self.tp as f64 / d as f64 }
    }
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(mut self, o: Counts) -> Counts {
        self += o;
        self
    }
}

/// Number of segments covering `duration`.
fn segment_count(duration: f64, segment_length: f64) -> usize {
    let n = duration / segment_length;
    let r = n.round();
    // Tolerate representation error on exact multiples.
    if (n - r).abs() < 1e-9 { r as usize } else { n.ceil() as usize }
}

/// Per-segment activity: segment `k` is `[k L, (k+1) L)` and is active when
/// an event overlaps it with positive measure.
pub fn segment_activity(events: &[Event], duration: f64, segment_length: f64) -> Vec<bool> {
    let n = segment_count(duration, segment_length);
    let mut out = vec![false; n];
    for e in events {
        if e.offset <= e.onset {
            continue;
        }
        let first = (e.onset / segment_length).floor().max(0.0) as usize;
        for (k, v) in out.iter_mut().enumerate().skip(first) {
            let (s, end) = (k as f64 * segment_length, (k + 1) as f64 * segment_length);
            if s >= e.offset {
                break;
            }
            if e.onset < end && e.offset > s {
                *v = true;
            }
        }
    }
    out
}

/// Segment-level comparison of one clip's predicted and reference events
/// for a single category.
pub fn segment_tabulate(pred: &[Event], reference: &[Event], duration: f64, segment_length: f64) -> Counts {
    let p = segment_activity(pred, duration, segment_length);
    let r = segment_activity(reference, duration, segment_length);
    let mut c = Counts::default();
    for (a, b) in p.into_iter().zip(r) {
        match (a, b) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// Counts aggregated per category, with the number of active reference
/// segments so that absent categories can be left out of the macro mean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub segment_length: f64,
    pub per_category: BTreeMap<String, Counts>,
}

impl SegmentCounts {
    pub fn new(segment_length: f64) -> Self {
        Self {
            segment_length,
            per_category: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, category: &str, c: Counts) {
        *self.per_category.entry(category.to_string()).or_default() += c;
    }

    pub fn merge(&mut self, other: &SegmentCounts) {
        for (k, &c) in &other.per_category {
            self.add(k, c);
        }
    }
}

/// Per-category F and the macro mean over categories with at least one
/// active reference segment.
pub fn f_measure(counts: &SegmentCounts) -> (BTreeMap<String, f64>, f64) {
    let per: BTreeMap<String, f64> = counts.per_category.iter().map(|(k, c)| (k.clone(), c.f())).collect();
    let present: Vec<f64> = counts
        .per_category
        .iter()
        .filter(|(_, c)| c.tp + c.fn_ > 0)
        .map(|(k, _)| per[k])
        .collect();
    let macro_f = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per, macro_f)
}
