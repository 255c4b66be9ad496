//! Dataset builds: soundscapes, samples, labels and manifests on disk.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::bank::{BankRecord, ClipBank, ClipSource, Split};
use crate::corpus::labels::encode_runs;
use crate::corpus::manifest::{manifest_path, write_manifest, DatasetMode, ManifestRecord};
use crate::corpus::samples::{make_negative_sample, make_positive_samples, Polarity, TsdSample};
use crate::corpus::soundscape::{synthesize_soundscape, PlacedEvent, Soundscape, SoundscapeConfig};
use crate::dsp::{frame_count, write_wav, AudioClip, WavEncoding};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

/// Soundscape counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    pub mode: DatasetMode,
    pub sizes: SplitSizes,
    pub seed: u64,
    #[serde(default)]
    pub soundscape: SoundscapeConfig,
    /// Label frame hop in samples at the soundscape rate.
    #[serde(default = "default_hop")]
    pub hop: usize,
}

fn default_hop() -> usize {
    441
}

impl BuildConfig {
    /// Default soundscapes and label hop.
    pub fn new(mode: DatasetMode, sizes: SplitSizes, seed: u64) -> Self {
        Self {
            mode,
            sizes,
            seed,
            soundscape: SoundscapeConfig::default(),
            hop: default_hop(),
        }
    }

    pub fn with_soundscape(self, soundscape: SoundscapeConfig) -> Self {
        Self { soundscape, ..self }
    }

    pub fn fps(&self) -> f64 {
        self.soundscape.sample_rate as f64 / self.hop as f64
    }

    pub fn frames(&self) -> usize {
        frame_count(self.soundscape.samples(), self.hop)
    }
}

/// Soundscape metadata as written to `soundscapes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundscapeRecord {
    pub id: String,
    pub split: Split,
    pub mixture_path: String,
    pub duration: f64,
    pub background_id: String,
    pub events: Vec<PlacedEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub soundscapes: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Soundscapes where no negative reference could be drawn.
    pub negative_skips: usize,
    pub positives_per_category: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub config: BuildConfig,
    pub categories: Vec<String>,
    pub splits: BTreeMap<Split, SplitReport>,
}

const SPLIT_STRIDE: u64 = 1 << 32;

fn split_ordinal(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Validation => 1,
        Split::Test => 2,
    }
}

fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

fn mkdirs(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Checks every category has two clips in each split that will be used.
pub fn check_feasible(bank: &ClipBank, sizes: &SplitSizes) -> Result<()> {
    let cats = bank.categories();
    if cats.len() < 2 {
        return Err(Error::Infeasible("the clip bank needs at least two categories".into()));
    }
    for split in Split::ALL {
        if sizes.get(split) == 0 {
            continue;
        }
        let part = bank.split(split);
        for cat in &cats {
            let n = part.of_category(cat).len();
            if n < 2 {
                return Err(Error::Infeasible(format!(
                    "category `{cat}` has {n} clip(s) in the {split} split; at least 2 are needed"
                )));
            }
        }
    }
    Ok(())
}

/// Synthesises soundscapes for indices `range` in parallel. Every item
/// draws from its own stream, so the result does not depend on workers.
fn synth_batch(
    split: Split,
    range: std::ops::Range<usize>,
    bank: &ClipBank,
    cfg: &BuildConfig,
) -> Result<Vec<Soundscape>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(range.len().max(1));
    let ids: Vec<usize> = range.collect();
    let chunk = ids.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<Soundscape>>> = std::thread::scope(|s| {
        let handles: Vec<_> = ids
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&i| {
                            let id = format!("{split}-{i:05}");
                            let mut rng = stream(cfg.seed, purpose::SOUNDSCAPE, split_ordinal(split) * SPLIT_STRIDE + i as u64);
                            synthesize_soundscape(&id, bank, &cfg.soundscape, &mut rng)
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("synthesis worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(ids.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Builds a dataset under `root`:
///
/// * `bank/` in-memory bank clips as WAV (file-backed clips are referenced in place),
/// * `mixtures/<split>/` soundscape WAVs,
/// * `labels/<split>/` run-length frame labels,
/// * `manifests/<split>.jsonl`, `bank.jsonl`, `soundscapes.jsonl`, `build_report.json`.
///
/// The output is a pure function of the bank and `cfg`.
pub fn build_dataset(bank: &ClipBank, cfg: &BuildConfig, root: &Path) -> Result<BuildReport> {
    cfg.soundscape.validate()?;
    if cfg.hop == 0 {
        return Err(Error::Config("label hop must be positive".into()));
    }
    check_feasible(bank, &cfg.sizes)?;
    mkdirs(root)?;

    let mut bank_paths = BTreeMap::new();
    for e in &bank.entries {
        let path = match &e.source {
            ClipSource::Memory(clip) => {
                mkdirs(&root.join("bank"))?;
                let r = rel(&["bank", &format!("{}.wav", e.id)]);
                write_wav(root.join(&r), clip, WavEncoding::Float32)?;
                r
            }
            ClipSource::File(p) => {
                let abs = std::path::absolute(p).map_err(|err| Error::io(p, err))?;
                abs.to_string_lossy().into_owned()
            }
        };
        bank_paths.insert(e.id.clone(), path);
    }
    let mut text = String::new();
    for e in &bank.entries {
        let rec = BankRecord {
            clip_path: bank_paths[&e.id].clone().into(),
            category: e.category.clone(),
            split: e.split.name().to_string(),
        };
        text += &serde_json::to_string(&rec).expect("record serialises");
        text.push('\n');
    }
    let p = root.join(BANK_MANIFEST);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;

    let fps = cfg.fps();
    let frames = cfg.frames();
    let mut report = BuildReport {
        config: cfg.clone(),
        categories: bank.categories(),
        splits: BTreeMap::new(),
    };
    let mut scape_records = Vec::new();
    for split in Split::ALL {
        let n = cfg.sizes.get(split);
        let part = bank.split(split);
        let mut sr = SplitReport::default();
        let mut samples: Vec<TsdSample> = Vec::new();
        let mut scapes: Vec<Soundscape> = Vec::with_capacity(n);
        let mixture_dir = root.join("mixtures").join(split.name());
        mkdirs(&mixture_dir)?;
        const BATCH: usize = 32;
        for start in (0..n).step_by(BATCH) {
            for mut scape in synth_batch(split, start..(start + BATCH).min(n), &part, cfg)? {
                let index = split_ordinal(split) * SPLIT_STRIDE + scapes.len() as u64;
                let mixture_path = rel(&["mixtures", split.name(), &format!("{}.wav", scape.id)]);
                write_wav(root.join(&mixture_path), &scape.mixture, WavEncoding::Float32)?;
                let mut rng = stream(cfg.seed, purpose::POSITIVES, index);
                samples.extend(make_positive_samples(&scape, &part, fps, frames, &mut rng));
                if cfg.mode == DatasetMode::StrongPlus {
                    let mut rng = stream(cfg.seed, purpose::NEGATIVES, index);
                    match make_negative_sample(&scape, &part, frames, &mut rng) {
                        Ok(s) => samples.push(s),
                        Err(Error::Infeasible(msg)) => {
                            log::warn!("{msg}");
                            sr.negative_skips += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
                scape_records.push(SoundscapeRecord {
                    id: scape.id.clone(),
                    split,
                    mixture_path,
                    duration: scape.duration,
                    background_id: scape.background_id.clone(),
                    events: scape.events.clone(),
                });
                // Keep only metadata; the audio is on disk.
                scape.mixture = AudioClip::silence(0, scape.mixture.sample_rate, scape.id.clone());
                scapes.push(scape);
            }
        }
        if cfg.mode == DatasetMode::Weak {
            let positives = samples.len();
            for k in 0..positives {
                let mut rng = stream(cfg.seed, purpose::WEAK_NEGATIVES, split_ordinal(split) * SPLIT_STRIDE + k as u64);
                let mut drawn = None;
                for _ in 0..1000 {
                    let scape = &scapes[rng.random_range(0..scapes.len())];
                    if let Ok(s) = make_negative_sample(scape, &part, frames, &mut rng) {
                        drawn = Some(s);
                        break;
                    }
                }
                samples.push(drawn.ok_or_else(|| {
                    Error::Infeasible(format!(
                        "no {split} soundscape leaves a bank category absent; weak negatives cannot be drawn"
                    ))
                })?);
            }
        }

        let label_dir = root.join("labels").join(split.name());
        mkdirs(&label_dir)?;
        let mut records = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let sample_id = format!("{split}-{i:06}");
            match s.polarity {
                Polarity::Positive => {
                    sr.positives += 1;
                    *sr.positives_per_category.entry(s.target_category.clone()).or_insert(0) += 1;
                }
                Polarity::Negative => sr.negatives += 1,
            }
            // Weak training data carries the clip bit only; evaluation
            // splits keep frame labels for segment scoring.
            let with_frames = !(cfg.mode.is_weak() && split == Split::Train);
            let frame_labels_path = if with_frames {
                let r = rel(&["labels", split.name(), &format!("{sample_id}.txt")]);
                let mut text = encode_runs(&s.frame_labels);
                text.push('\n');
                std::fs::write(root.join(&r), text).map_err(|e| Error::io(root.join(&r), e))?;
                Some(r)
            } else {
                None
            };
            records.push(ManifestRecord {
                sample_id,
                split,
                mixture_id: s.mixture_id.clone(),
                mixture_path: rel(&["mixtures", split.name(), &format!("{}.wav", s.mixture_id)]),
                reference_id: s.reference_id.clone(),
                reference_path: bank_paths[&s.reference_id].clone(),
                target_category: s.target_category.clone(),
                polarity: s.polarity,
                mode: cfg.mode,
                frame_labels_path,
                clip_label: cfg.mode.is_weak().then(|| s.clip_label()),
                fps,
                duration: cfg.soundscape.samples() as f64 / cfg.soundscape.sample_rate as f64,
                frames,
            });
        }
        write_manifest(&manifest_path(root, split), &records)?;
        sr.soundscapes = scapes.len();
        report.splits.insert(split, sr);
    }

    let mut text = String::new();
    for r in &scape_records {
        text += &serde_json::to_string(r).expect("record serialises");
        text.push('\n');
    }
    let p = root.join("soundscapes.jsonl");
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    let p = root.join("build_report.json");
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(report)
}

/// Clip-bank ingestion manifest written next to the dataset manifests.
pub const BANK_MANIFEST: &str = "bank.jsonl";

pub fn read_soundscapes(root: &Path) -> Result<Vec<SoundscapeRecord>> {
    let p = root.join("soundscapes.jsonl");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest {
                path: p.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_report(root: &Path) -> Result<BuildReport> {
    let p = root.join("build_report.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}
