//! Post-processing of frame probabilities and segment-based scoring.

mod chance;
mod segment;

pub use chance::{all_active_f, chance_level, ChanceItem, ChanceLevel};
pub use segment::{
    binarize, events_from_labels, f_measure, median_filter, segment_activity, segment_tabulate, Counts, Event,
    MetricsConfig, SegmentCounts,
};
