//! Invariant checks over a built dataset directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use tsdnet_core::corpus::{
    manifest_path, read_manifest, read_soundscapes, ClipBank, DatasetMode, Polarity, Split,
};

/// sha256 of every file under `root`, keyed by relative path.
pub fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

/// Returns a description of every violated invariant.
pub fn dataset_violations(root: &Path, bank: &ClipBank, mode: DatasetMode) -> Vec<String> {
    let mut bad = Vec::new();
    let scapes: BTreeMap<String, _> = read_soundscapes(root)
        .unwrap()
        .into_iter()
        .map(|s| (s.id.clone(), s))
        .collect();
    let mut clips_by_split: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for s in scapes.values() {
        for e in &s.events {
            clips_by_split.entry(s.split).or_default().insert(e.clip_id.clone());
        }
    }
    for split in Split::ALL {
        let records = read_manifest(&manifest_path(root, split)).unwrap();
        let (mut pos, mut neg) = (0usize, 0usize);
        for r in &records {
            let scape = &scapes[&r.mixture_id];
            let present: BTreeSet<&str> = scape.events.iter().map(|e| e.annotation.category.as_str()).collect();
            let ingredients: BTreeSet<&str> = scape.events.iter().map(|e| e.clip_id.as_str()).collect();
            let reference = bank.get(&r.reference_id).unwrap();
            clips_by_split.entry(split).or_default().insert(r.reference_id.clone());
            if reference.category != r.target_category {
                bad.push(format!("{}: reference category differs from target", r.sample_id));
            }
            if ingredients.contains(r.reference_id.as_str()) {
                bad.push(format!("{}: reference clip is mixed into its mixture", r.sample_id));
            }
            if scape.split != split || reference.split != split {
                bad.push(format!("{}: crosses splits", r.sample_id));
            }
            let labels = r.frame_labels(root).unwrap();
            match r.polarity {
                Polarity::Positive => {
                    pos += 1;
                    if !present.contains(r.target_category.as_str()) {
                        bad.push(format!("{}: positive target absent from mixture", r.sample_id));
                    }
                    if r.clip_label.is_some_and(|v| v != 1) {
                        bad.push(format!("{}: positive with clip label 0", r.sample_id));
                    }
                }
                Polarity::Negative => {
                    neg += 1;
                    if present.contains(r.target_category.as_str()) {
                        bad.push(format!("{}: negative target present in mixture", r.sample_id));
                    }
                    if labels.as_ref().is_some_and(|l| l.iter().any(|&v| v != 0)) {
                        bad.push(format!("{}: negative frame labels do not sum to zero", r.sample_id));
                    }
                    if r.clip_label.is_some_and(|v| v != 0) {
                        bad.push(format!("{}: negative with clip label 1", r.sample_id));
                    }
                }
            }
        }
        match mode {
            DatasetMode::Weak if pos != neg => bad.push(format!("{split}: {pos} weak positives vs {neg} negatives")),
            DatasetMode::Strong if neg != 0 => bad.push(format!("{split}: strong build has negatives")),
            _ => {}
        }
    }
    let splits: Vec<_> = clips_by_split.values().collect();
    for i in 0..splits.len() {
        for j in i + 1..splits.len() {
            let shared = splits[i].intersection(splits[j]).count();
            if shared > 0 {
                bad.push(format!("{shared} clip ids shared between splits"));
            }
        }
    }
    bad
}
