//! Frame rasterisation of annotations and the run-length label format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One placed event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub category: String,
    /// Seconds.
    pub onset: f64,
    /// Seconds, exclusive.
    pub offset: f64,
}

impl EventAnnotation {
    pub fn validate(&self, duration: f64) -> Result<()> {
        if !(0.0 <= self.onset && self.onset < self.offset && self.offset <= duration) {
            return Err(Error::Data(format!(
                "annotation `{}` [{}, {}) is not inside [0, {duration}]",
                self.category, self.onset, self.offset
            )));
        }
        Ok(())
    }
}

/// Frame `i` is active when `[i/fps, (i+1)/fps)` overlaps a `target`
/// annotation with positive measure.
pub fn frame_labels(annotations: &[EventAnnotation], target: &str, fps: f64, t: usize) -> Vec<u8> {
    let mut out = vec![0u8; t];
    for a in annotations.iter().filter(|a| a.category == target) {
        for (i, v) in out.iter_mut().enumerate() {
            let (start, end) = (i as f64 / fps, (i + 1) as f64 / fps);
            if start < a.offset && end > a.onset {
                *v = 1;
            }
        }
    }
    out
}

/// `"start:end,start:end"` with exclusive ends; empty for no activity.
pub fn encode_runs(labels: &[u8]) -> String {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &v) in labels.iter().chain(std::iter::once(&0)).enumerate() {
        match (v != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(format!("{s}:{i}"));
                start = None;
            }
            _ => {}
        }
    }
    runs.join(",")
}

pub fn decode_runs(text: &str, t: usize) -> Result<Vec<u8>> {
    let mut out = vec![0u8; t];
    let text = text.trim();
    if text.is_empty() {
        return Ok(out);
    }
    for run in text.split(',') {
        let bad = || Error::Data(format!("malformed label run `{run}`"));
        let (a, b) = run.split_once(':').ok_or_else(bad)?;
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b || b > t {
            return Err(Error::Data(format!("label run `{run}` outside 0..{t}")));
        }
        out[a..b].fill(1);
    }
    Ok(out)
}
