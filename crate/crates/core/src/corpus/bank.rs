//! Labelled source clips, either ingested from disk or synthesised.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsp::{load_wav, resample, AudioClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" | "valid" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}` (train | validation | test)"))),
        }
    }
}

/// Where a clip's samples come from.
#[derive(Debug, Clone)]
pub enum ClipSource {
    Memory(Arc<AudioClip>),
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ClipEntry {
    pub id: String,
    pub category: String,
    pub duration: f64,
    pub split: Split,
    pub source: ClipSource,
}

impl ClipEntry {
    /// Samples at `sample_rate`, resampled when the source differs.
    pub fn load(&self, sample_rate: u32) -> Result<AudioClip> {
        let clip = match &self.source {
            ClipSource::Memory(c) => c.as_ref().clone(),
            ClipSource::File(p) => load_wav(p)?,
        };
        if clip.sample_rate == sample_rate {
            Ok(clip)
        } else {
            resample(&clip, sample_rate)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClipBank {
    pub entries: Vec<ClipEntry>,
}

/// One line of the ingestion manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankRecord {
    pub clip_path: PathBuf,
    pub category: String,
    pub split: String,
}

impl ClipBank {
    pub fn new(entries: Vec<ClipEntry>) -> Result<Self> {
        let bank = Self { entries };
        bank.validate()?;
        Ok(bank)
    }

    /// Reads a line-delimited ingestion manifest. Relative clip paths are
    /// taken relative to the manifest's directory. Clip ids are file stems.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let rec: BankRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let split = rec.split.parse::<Split>().map_err(|e| bad(e.to_string()))?;
            let clip_path = if rec.clip_path.is_absolute() {
                rec.clip_path.clone()
            } else {
                base.join(&rec.clip_path)
            };
            let clip = load_wav(&clip_path)?;
            let id = clip_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| bad(format!("no file name in `{}`", rec.clip_path.display())))?;
            entries.push(ClipEntry {
                id,
                category: rec.category,
                duration: clip.duration(),
                split,
                source: ClipSource::File(clip_path),
            });
        }
        Self::new(entries)
    }

    /// Unique ids, disjoint splits, every category with at least two clips.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Data(format!("clip id `{}` appears more than once", e.id)));
            }
            if !(e.duration > 0.0) {
                return Err(Error::Data(format!("clip `{}` is empty", e.id)));
            }
        }
        for (cat, n) in self.category_counts() {
            if n < 2 {
                return Err(Error::Data(format!("category `{cat}` has {n} clip(s); at least 2 are needed")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted category names.
    pub fn categories(&self) -> Vec<String> {
        self.category_counts().into_keys().collect()
    }

    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.category.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Entries of one split, in bank order.
    pub fn split(&self, split: Split) -> ClipBank {
        ClipBank {
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&ClipEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Indices of entries in `category`.
    pub fn of_category(&self, category: &str) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].category == category)
            .collect()
    }

    /// Bank without the given categories.
    pub fn without(&self, categories: &[String]) -> ClipBank {
        ClipBank {
            entries: self
                .entries
                .iter()
                .filter(|e| !categories.contains(&e.category))
                .cloned()
                .collect(),
        }
    }
}
