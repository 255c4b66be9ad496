//! Clip banks, soundscape synthesis and target-sound dataset builds.

mod bank;
mod build;
mod labels;
mod manifest;
mod samples;
mod soundscape;
mod toy;

pub use bank::{BankRecord, ClipBank, ClipEntry, ClipSource, Split};
pub use build::{
    build_dataset, check_feasible, BANK_MANIFEST, read_report, read_soundscapes, BuildConfig, BuildReport, SoundscapeRecord,
    SplitReport, SplitSizes,
};
pub use labels::{decode_runs, encode_runs, frame_labels, EventAnnotation};
pub use manifest::{manifest_path, read_manifest, write_manifest, DatasetMode, ManifestRecord};
pub use samples::{make_negative_sample, make_positive_samples, Polarity, TsdSample};
pub use soundscape::{pink_noise, synthesize_soundscape, PlacedEvent, Soundscape, SoundscapeConfig};
pub use toy::{
    band_energies, oracle_classify, synth_clip, synth_toy_bank, toy_categories, Family, ToyBank, ToyCategory,
    ORACLE_MIN_ACCURACY, TOY_SAMPLE_RATE,
};
