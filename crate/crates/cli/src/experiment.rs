//! Experiment directories: resolved config snapshot, provenance metadata,
//! logs and checkpoints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tsdnet_core::corpus::{manifest_path, Split};
use tsdnet_core::{Error, Result};

use crate::config::ExperimentConfig;

/// Environment variable naming the directory new experiments go under.
pub const EXPERIMENT_ROOT_VAR: &str = "TSDNET_EXPERIMENT_ROOT";

/// `git describe`-style build identifier.
pub fn version() -> String {
    format!("tsdnet {} ({})", env!("CARGO_PKG_VERSION"), env!("TSDNET_GIT_DESCRIBE"))
}

pub fn experiment_root() -> PathBuf {
    std::env::var_os(EXPERIMENT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("experiments"))
}

/// `<root>/<command>-<UTC timestamp>`, with a numeric suffix if taken.
pub fn timestamped_dir(command: &str) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = experiment_root().join(format!("{command}-{stamp}"));
    let mut dir = base.clone();
    let mut k = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{k}", base.display()));
        k += 1;
    }
    dir
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes of every manifest present under a dataset root.
pub fn manifest_hashes(data: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for split in Split::ALL {
        let p = manifest_path(data, split);
        if p.exists() {
            out.insert(split.name().to_string(), sha256_file(&p)?);
        }
    }
    Ok(out)
}

/// Provenance written as `meta.json`; everything but `created` is a pure
/// function of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default)]
    pub manifests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<String>,
    pub created: String,
}

/// An experiment directory being written.
pub struct Experiment {
    pub dir: PathBuf,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

impl Experiment {
    /// Creates `dir` and writes the config snapshot and metadata.
    pub fn create(dir: &Path, config: &ExperimentConfig, meta: &RunMeta) -> Result<Self> {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(io_err(dir))?;
        let exp = Self { dir: dir.to_path_buf() };
        exp.write("config.toml", config.to_toml().as_bytes())?;
        exp.write_json("meta.json", meta)?;
        Ok(exp)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(io_err(&p))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("value serialises");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
