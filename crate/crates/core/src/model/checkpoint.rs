//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `TSDNCKPT`, a little-endian `u32` format
//! version, a `u64` header length, a JSON header describing every array,
//! then the arrays as little-endian `f32` in header order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::state::ModelState;
use crate::nn::{Adam, AdamConfig, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"TSDNCKPT";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    state_version: u32,
    config_hash: String,
    config: ModelConfig,
    optimizer: Option<OptimizerHeader>,
    meta: BTreeMap<String, String>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: ModelState,
    pub optimizer: Option<Adam>,
    /// Free-form provenance (stage, epoch, metric).
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(state: ModelState) -> Self {
        Self {
            state,
            optimizer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = Vec::new();
        let mut data: Vec<&Tensor> = Vec::new();
        let mut push_group = |group: &str, store: &ParamStore| {
            for (name, t) in store.iter() {
                arrays.push(ArrayEntry {
                    group: group.to_string(),
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                });
            }
        };
        push_group("param", &self.state.params);
        push_group("buffer", &self.state.buffers);
        let mut first = ParamStore::new();
        let mut second = ParamStore::new();
        if let Some(opt) = &self.optimizer {
            for (k, v) in &opt.first {
                first.insert(k.clone(), v.clone());
            }
            for (k, v) in &opt.second {
                second.insert(k.clone(), v.clone());
            }
            push_group("adam_m", &first);
            push_group("adam_v", &second);
        }
        for store in [&self.state.params, &self.state.buffers, &first, &second] {
            data.extend(store.iter().map(|(_, t)| t));
        }
        let header = Header {
            state_version: self.state.version,
            config_hash: self.state.config_hash(),
            config: self.state.config.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in data {
            for &v in t.as_standard_layout().iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint. With `expected_hash` set, a differing config
    /// hash is refused unless `allow_mismatch`.
    pub fn from_bytes(bytes: &[u8], expected_hash: Option<&str>, allow_mismatch: bool) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let format = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {format} (expected {CHECKPOINT_FORMAT})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.config.hash() != header.config_hash {
            return Err(Error::Checkpoint("stored config does not match its recorded hash".into()));
        }
        if let Some(expected) = expected_hash {
            if expected != header.config_hash && !allow_mismatch {
                return Err(Error::Checkpoint(format!(
                    "config hash mismatch: checkpoint {} vs expected {expected}",
                    header.config_hash
                )));
            }
        }
        let mut data = &body[hlen..];
        let mut groups: BTreeMap<String, ParamStore> = BTreeMap::new();
        for entry in &header.arrays {
            let n: usize = entry.shape.iter().product();
            if data.len() < 4 * n {
                return Err(Error::Checkpoint(format!("truncated data for `{}`", entry.name)));
            }
            let values: Vec<f64> = data[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            data = &data[4 * n..];
            let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
            groups.entry(entry.group.clone()).or_default().insert(entry.name.clone(), t);
        }
        let state = ModelState {
            config: header.config,
            params: groups.remove("param").unwrap_or_default(),
            buffers: groups.remove("buffer").unwrap_or_default(),
            version: header.state_version,
        };
        let reference = ModelState::init(state.config.clone(), 0)?;
        for (name, t) in reference.params.iter().chain(reference.buffers.iter()) {
            let found = state.params.get(name).or_else(|| state.buffers.get(name));
            match found {
                Some(v) if v.shape() == t.shape() => {}
                Some(v) => {
                    return Err(Error::Checkpoint(format!(
                        "`{name}` has shape {:?}, config implies {:?}",
                        v.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing array `{name}`"))),
            }
        }
        let optimizer = header.optimizer.map(|o| {
            let to_map = |s: Option<ParamStore>| {
                s.map(|s| s.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
                    .unwrap_or_default()
            };
            Adam {
                config: o.config,
                step: o.step,
                first: to_map(groups.remove("adam_m")),
                second: to_map(groups.remove("adam_v")),
            }
        });
        Ok(Self {
            state,
            optimizer,
            meta: header.meta,
        })
    }

    pub fn load(path: impl AsRef<Path>, expected_hash: Option<&str>, allow_mismatch: bool) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_hash, allow_mismatch)
    }
}
