//! Line-delimited dataset manifests.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::bank::Split;
use crate::corpus::labels::decode_runs;
use crate::corpus::samples::Polarity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetMode {
    #[serde(rename = "strong")]
    Strong,
    #[serde(rename = "strong+")]
    StrongPlus,
    #[serde(rename = "weak")]
    Weak,
}

impl DatasetMode {
    pub fn name(self) -> &'static str {
        match self {
            DatasetMode::Strong => "strong",
            DatasetMode::StrongPlus => "strong+",
            DatasetMode::Weak => "weak",
        }
    }

    pub fn is_weak(self) -> bool {
        self == DatasetMode::Weak
    }
}

impl std::fmt::Display for DatasetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strong" => Ok(DatasetMode::Strong),
            "strong+" => Ok(DatasetMode::StrongPlus),
            "weak" => Ok(DatasetMode::Weak),
            other => Err(Error::Config(format!("unknown mode `{other}` (strong | strong+ | weak)"))),
        }
    }
}

/// One sample. Paths are relative to the dataset root unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub split: Split,
    pub mixture_id: String,
    pub mixture_path: String,
    pub reference_id: String,
    pub reference_path: String,
    pub target_category: String,
    pub polarity: Polarity,
    pub mode: DatasetMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_labels_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_label: Option<u8>,
    pub fps: f64,
    pub duration: f64,
    pub frames: usize,
}

impl ManifestRecord {
    pub fn resolve(root: &Path, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }

    pub fn frame_labels(&self, root: &Path) -> Result<Option<Vec<u8>>> {
        let Some(rel) = &self.frame_labels_path else {
            return Ok(None);
        };
        let path = Self::resolve(root, rel);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        decode_runs(&text, self.frames).map(Some)
    }

    /// Clip-level target: the stored bit, else presence in the frame labels.
    pub fn clip_target(&self, root: &Path) -> Result<u8> {
        match self.clip_label {
            Some(v) => Ok(v),
            None => Ok(self
                .frame_labels(root)?
                .map(|l| l.iter().any(|&v| v != 0) as u8)
                .unwrap_or((self.polarity == Polarity::Positive) as u8)),
        }
    }
}

pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
    root.join("manifests").join(format!("{split}.jsonl"))
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serialises");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.frame_labels_path.is_none() && rec.clip_label.is_none() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: "record has neither frame_labels_path nor clip_label".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}
