//! Open-domain protocol: some categories never appear in training, neither
//! as targets nor inside training mixtures, and the model is scored on
//! detecting them from a reference alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsdnet_core::corpus::{
    manifest_path, read_manifest, read_soundscapes, write_manifest, ManifestRecord, Split,
};
use tsdnet_core::eval::EvalReport;
use tsdnet_core::model::{Checkpoint, Supervision};
use tsdnet_core::train::load_split;
use tsdnet_core::{Error, Result};

use crate::commands::{cmd_pretrain, dataset_bank, train_from, unknown_categories, StageSummary};
use crate::config::ExperimentConfig;
use crate::experiment::sha256_file;

/// Manifests of an open-domain run, written under `<out>/split`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenDomainSplit {
    pub held_out: BTreeSet<String>,
    pub root: PathBuf,
    /// Samples dropped from each split.
    pub removed: BTreeMap<String, usize>,
    pub kept: BTreeMap<String, usize>,
}

fn absolute(root: &Path, rel: &str) -> String {
    let p = ManifestRecord::resolve(root, rel);
    std::path::absolute(&p).unwrap_or(p).to_string_lossy().into_owned()
}

/// Builds the filtered manifests. Training and validation drop every
/// sample whose mixture contains a held-out event or whose target is held
/// out; the test split keeps only held-out targets.
pub fn make_split(data: &Path, held_out: &[String], out: &Path) -> Result<OpenDomainSplit> {
    if held_out.is_empty() {
        return Err(Error::Config("open-domain evaluation needs at least one held-out category".into()));
    }
    let bank = dataset_bank(data)?;
    let unknown = unknown_categories(&bank, held_out);
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "unknown held-out categories: {} (bank has {})",
            unknown.join(", "),
            bank.categories().join(", ")
        )));
    }
    let held: BTreeSet<String> = held_out.iter().cloned().collect();
    let contents: BTreeMap<String, BTreeSet<String>> = read_soundscapes(data)?
        .into_iter()
        .map(|s| (s.id, s.events.iter().map(|e| e.annotation.category.clone()).collect()))
        .collect();

    let mut split = OpenDomainSplit {
        held_out: held.clone(),
        root: out.to_path_buf(),
        removed: BTreeMap::new(),
        kept: BTreeMap::new(),
    };
    for s in Split::ALL {
        let records = read_manifest(&manifest_path(data, s))?;
        let total = records.len();
        let mut kept = Vec::new();
        for mut r in records {
            let keep = match s {
                Split::Test => held.contains(&r.target_category),
                _ => {
                    let scape = contents.get(&r.mixture_id).ok_or_else(|| {
                        Error::Data(format!("mixture `{}` missing from soundscapes.jsonl", r.mixture_id))
                    })?;
                    !held.contains(&r.target_category) && scape.is_disjoint(&held)
                }
            };
            if keep {
                r.mixture_path = absolute(data, &r.mixture_path);
                r.reference_path = absolute(data, &r.reference_path);
                r.frame_labels_path = r.frame_labels_path.as_deref().map(|p| absolute(data, p));
                kept.push(r);
            }
        }
        split.removed.insert(s.name().into(), total - kept.len());
        split.kept.insert(s.name().into(), kept.len());
        write_manifest(&manifest_path(out, s), &kept)?;
    }
    let violations = verify_split(data, out, &held)?;
    if !violations.is_empty() {
        return Err(Error::Data(format!("open-domain split leaks held-out data: {}", violations.join("; "))));
    }
    Ok(split)
}

/// Every training or validation sample that targets a held-out category
/// or whose mixture contains one. Empty for a valid split.
pub fn verify_split(data: &Path, split_root: &Path, held: &BTreeSet<String>) -> Result<Vec<String>> {
    let contents: BTreeMap<String, BTreeSet<String>> = read_soundscapes(data)?
        .into_iter()
        .map(|s| (s.id, s.events.iter().map(|e| e.annotation.category.clone()).collect()))
        .collect();
    let mut out = Vec::new();
    for s in [Split::Train, Split::Validation] {
        for r in read_manifest(&manifest_path(split_root, s))? {
            if held.contains(&r.target_category) {
                out.push(format!("{} targets {}", r.sample_id, r.target_category));
            }
            match contents.get(&r.mixture_id) {
                Some(c) if c.is_disjoint(held) => {}
                Some(c) => out.push(format!(
                    "{} mixes {}",
                    r.sample_id,
                    c.intersection(held).cloned().collect::<Vec<_>>().join(",")
                )),
                None => out.push(format!("{} has unknown mixture {}", r.sample_id, r.mixture_id)),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenDomainReport {
    pub split: OpenDomainSplit,
    pub pretrain: StageSummary,
    pub train: StageSummary,
    pub evaluation: EvalReport,
    /// Mean per-category F over the held-out categories.
    pub average_f: f64,
    /// Held-out score minus the random-model level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_over_chance: Option<f64>,
}

impl OpenDomainReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let held: Vec<&str> = self.split.held_out.iter().map(String::as_str).collect();
        let _ = writeln!(out, "held out: {}", held.join(", "));
        for (s, n) in &self.split.kept {
            let _ = writeln!(out, "  {s:<11} kept {n:>5}, removed {:>5}", self.split.removed.get(s).copied().unwrap_or(0));
        }
        out += &self.evaluation.table();
        if let Some(m) = self.margin_over_chance {
            let _ = writeln!(out, "margin over chance: {:+.1} points", 100.0 * m);
        }
        out
    }
}

/// `open-domain`: filtered split, pretraining without the held-out
/// categories, detection training, held-out evaluation.
pub fn cmd_open_domain(cfg: &ExperimentConfig, data: &Path, held_out: &[String], out: &Path) -> Result<OpenDomainReport> {
    let split = make_split(data, held_out, &out.join("split"))?;
    let pretrain = cmd_pretrain(cfg, data, &out.join("pretrain"), held_out)?;
    let pre = Checkpoint::load(&pretrain.best_checkpoint, None, false)?;
    // Detection training reads the filtered manifests; the bank is unused.
    let train = train_from(cfg, &split.root, &pre.state, &out.join("train"))?;
    let model = Checkpoint::load(&train.best_checkpoint, None, false)?;
    let test = load_split(&split.root, Split::Test, &cfg.dsp)?;
    let supervision = if test.mode.is_weak() { Supervision::Weak } else { Supervision::Strong };
    let evaluation = crate::commands::evaluate_into(
        cfg,
        &model.state,
        &test,
        supervision,
        &sha256_file(&train.best_checkpoint)?,
        &out.join("evaluation"),
    )?;
    let per: Vec<f64> = split
        .held_out
        .iter()
        .filter_map(|c| evaluation.per_category.get(c).map(|s| s.f))
        .collect();
    let average_f = per.iter().sum::<f64>() / per.len().max(1) as f64;
    let report = OpenDomainReport {
        margin_over_chance: evaluation.chance.map(|c| evaluation.macro_f - c.monte_carlo),
        split,
        pretrain,
        train,
        evaluation,
        average_f,
    };
    let path = out.join("open_domain.json");
    let text = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    std::fs::write(&path, text).map_err(crate::experiment::io_err(&path))?;
    Ok(report)
}
