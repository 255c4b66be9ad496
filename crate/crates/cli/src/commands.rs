//! One function per subcommand. Each returns a summary the binary prints;
//! all artefacts go to the experiment directory given.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsdnet_core::corpus::{
    build_dataset, read_report, synth_toy_bank, BuildReport, ClipBank, DatasetMode, Split, BANK_MANIFEST,
};
use tsdnet_core::eval::{evaluate_split, split_chance, EvalReport};
use tsdnet_core::model::{Checkpoint, ModelState, Supervision};
use tsdnet_core::nn::Adam;
use tsdnet_core::train::{
    joint_finetune, load_bank_split, load_split, pretrain_conditional, train_detection, EpochRecord, SplitData, Stage,
    TrainOutcome,
};
use tsdnet_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::experiment::{io_err, manifest_hashes, read_json, sha256_file, version, Experiment, RunMeta};

/// Checkpoint metadata keys.
pub const META_STAGE: &str = "stage";
pub const META_EPOCH: &str = "epoch";
pub const META_SUPERVISION: &str = "supervision";
pub const META_CONFIG_HASH: &str = "experiment_config_hash";

fn meta(cfg: &ExperimentConfig, command: &str, data: Option<&Path>, init: Option<&Path>) -> Result<RunMeta> {
    Ok(RunMeta {
        command: command.to_string(),
        version: version(),
        config_hash: cfg.hash(),
        seed: match command {
            "build-dataset" => cfg.corpus.seed,
            _ => cfg.training.seed,
        },
        dataset: data.map(|d| d.display().to_string()),
        manifests: match data {
            Some(d) => manifest_hashes(d)?,
            None => BTreeMap::new(),
        },
        init_checkpoint: init.map(sha256_file).transpose()?,
        created: chrono::Utc::now().to_rfc3339(),
    })
}

/// The clip bank named by the config: an ingestion manifest, or the
/// synthetic bank.
pub fn config_bank(cfg: &ExperimentConfig) -> Result<ClipBank> {
    match &cfg.corpus.bank_manifest {
        Some(p) => ClipBank::from_manifest(p),
        None => {
            let toy = synth_toy_bank(cfg.corpus.seed, cfg.corpus.toy_categories, cfg.corpus.toy_clips_per_category)?;
            log::info!(
                "synthetic bank: {} clips, band-energy oracle accuracy {:.3}",
                toy.bank.len(),
                toy.oracle_accuracy
            );
            Ok(toy.bank)
        }
    }
}

/// `build-dataset`: bank, soundscapes, manifests and a build report.
pub fn cmd_build_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<BuildReport> {
    let bank = config_bank(cfg)?;
    let report = build_dataset(&bank, &cfg.build_config(), out)?;
    let p = out.join("config.toml");
    std::fs::write(&p, cfg.to_toml()).map_err(io_err(&p))?;
    Ok(report)
}

/// Bank manifest written by `build-dataset`.
pub fn dataset_bank(data: &Path) -> Result<ClipBank> {
    ClipBank::from_manifest(data.join(BANK_MANIFEST))
}

/// Dataset mode recorded in the build report.
pub fn dataset_mode(data: &Path) -> Result<DatasetMode> {
    Ok(read_report(data)?.config.mode)
}

fn supervision_of(mode: DatasetMode) -> Supervision {
    if mode.is_weak() {
        Supervision::Weak
    } else {
        Supervision::Strong
    }
}

/// What a training command leaves behind, also written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub dir: PathBuf,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_metric: Option<f64>,
    pub metric: String,
    pub best_checkpoint: PathBuf,
    pub checkpoint_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<EvalReport>,
}

fn checkpoint(state: &ModelState, adam: Option<&Adam>, stage: Stage, epoch: usize, cfg: &ExperimentConfig) -> Checkpoint {
    let mut ck = Checkpoint::new(state.clone());
    ck.optimizer = adam.cloned();
    ck.meta.insert(META_STAGE.into(), stage.name().into());
    ck.meta.insert(META_EPOCH.into(), epoch.to_string());
    ck.meta.insert(META_CONFIG_HASH.into(), cfg.hash());
    ck
}

fn run_stage(
    exp: &Experiment,
    cfg: &ExperimentConfig,
    stage: Stage,
    train: impl FnOnce(&mut dyn FnMut(&EpochRecord, &ModelState, &Adam) -> Result<()>) -> Result<TrainOutcome>,
    supervision: Option<Supervision>,
    validation: Option<&SplitData>,
) -> Result<StageSummary> {
    let mut hook = |rec: &EpochRecord, state: &ModelState, adam: &Adam| {
        let mut ck = checkpoint(state, Some(adam), stage, rec.epoch, cfg);
        if let Some(s) = supervision {
            ck.meta.insert(META_SUPERVISION.into(), format!("{s:?}").to_lowercase());
        }
        ck.save(exp.path(&format!("checkpoints/epoch-{:03}.ckpt", rec.epoch)))
    };
    let outcome = train(&mut hook)?;
    exp.write("steps.jsonl", outcome.log.steps_jsonl().as_bytes())?;
    exp.write("epochs.jsonl", outcome.log.epochs_jsonl().as_bytes())?;
    let mut best = checkpoint(&outcome.best, None, stage, outcome.best_epoch, cfg);
    let mut last = checkpoint(&outcome.last, Some(&outcome.optimizer), stage, outcome.log.epochs.len(), cfg);
    if let Some(s) = supervision {
        let s = format!("{s:?}").to_lowercase();
        best.meta.insert(META_SUPERVISION.into(), s.clone());
        last.meta.insert(META_SUPERVISION.into(), s);
    }
    let best_path = exp.path("best.ckpt");
    best.save(&best_path)?;
    last.save(exp.path("last.ckpt"))?;
    let report = match (validation, supervision) {
        (Some(v), Some(s)) => Some(evaluate_split(&outcome.best, v, &cfg.evaluation.metrics(), s)?),
        _ => None,
    };
    let summary = StageSummary {
        stage,
        dir: exp.dir.clone(),
        epochs: outcome.log.epochs.len(),
        best_epoch: outcome.best_epoch,
        best_metric: outcome.best_metric,
        initial_metric: outcome.initial_metric,
        metric: outcome.log.epochs.first().map(|e| e.metric.clone()).unwrap_or_default(),
        checkpoint_hash: sha256_file(&best_path)?,
        best_checkpoint: best_path,
        validation: report,
    };
    exp.write_json("summary.json", &summary)?;
    Ok(summary)
}

/// `pretrain`: classification pretraining of the conditional network on
/// the dataset's clip bank, optionally without some categories.
pub fn cmd_pretrain(cfg: &ExperimentConfig, data: &Path, out: &Path, exclude: &[String]) -> Result<StageSummary> {
    let bank = dataset_bank(data)?.without(exclude);
    let exp = Experiment::create(out, cfg, &meta(cfg, "pretrain", Some(data), None)?)?;
    let train = load_bank_split(&bank, Split::Train, &cfg.dsp)?;
    let validation = load_bank_split(&bank, Split::Validation, &cfg.dsp)?;
    let state = ModelState::init(cfg.model.build(bank.categories()), cfg.training.seed)?;
    let tc = cfg.train_config(Stage::PretrainConditional, Supervision::Strong);
    let fps = cfg.dsp.reference.base.frames_per_second();
    run_stage(
        &exp,
        cfg,
        Stage::PretrainConditional,
        |hook| pretrain_conditional(state, &train, &validation, &tc, fps, hook),
        None,
        None,
    )
}

fn load_stage_checkpoint(path: &Path, accepted: &[Stage], hint: &str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} does not exist; {hint}", path.display())));
    }
    let ck = Checkpoint::load(path, None, false)?;
    let stage = ck.meta.get(META_STAGE).map(String::as_str).unwrap_or("unknown");
    if !accepted.iter().any(|s| s.name() == stage) {
        return Err(Error::Config(format!(
            "checkpoint {} comes from stage `{stage}`; {hint}",
            path.display()
        )));
    }
    Ok(ck)
}

/// `train`: detection training on top of a pretrained conditional network.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, init: &Path, out: &Path) -> Result<StageSummary> {
    let ck = load_stage_checkpoint(
        init,
        &[Stage::PretrainConditional, Stage::TrainDetection, Stage::JointFinetune],
        "run `tsdnet pretrain` first and pass its best.ckpt with --init",
    )?;
    train_from(cfg, data, &ck.state, out)
}

/// Detection training from a state whose conditional network is kept.
pub fn train_from(cfg: &ExperimentConfig, data: &Path, pretrained: &ModelState, out: &Path) -> Result<StageSummary> {
    let mut state = ModelState::init(cfg.model.build(pretrained.config.categories.clone()), cfg.training.seed)?;
    state.adopt_conditional(pretrained)?;
    let exp = Experiment::create(out, cfg, &meta(cfg, "train", Some(data), None)?)?;
    let train = load_split(data, Split::Train, &cfg.dsp)?;
    let validation = load_split(data, Split::Validation, &cfg.dsp)?;
    let supervision = supervision_of(train.mode);
    let tc = cfg.train_config(Stage::TrainDetection, supervision);
    run_stage(
        &exp,
        cfg,
        Stage::TrainDetection,
        |hook| train_detection(state, &train, &validation, &tc, hook),
        Some(supervision),
        Some(&validation),
    )
}

/// `finetune`: joint training of both networks from a detection checkpoint.
pub fn cmd_finetune(cfg: &ExperimentConfig, data: &Path, init: &Path, out: &Path) -> Result<StageSummary> {
    let ck = load_stage_checkpoint(
        init,
        &[Stage::TrainDetection, Stage::JointFinetune],
        "fine-tuning starts from a detection model; run `tsdnet train` first and pass its best.ckpt with --init",
    )?;
    if ck.state.config.fusion != cfg.model.fusion {
        return Err(Error::Config(format!(
            "checkpoint uses {:?} fusion but the config asks for {:?}",
            ck.state.config.fusion, cfg.model.fusion
        )));
    }
    let exp = Experiment::create(out, cfg, &meta(cfg, "finetune", Some(data), Some(init))?)?;
    let train = load_split(data, Split::Train, &cfg.dsp)?;
    let validation = load_split(data, Split::Validation, &cfg.dsp)?;
    let supervision = supervision_of(train.mode);
    let tc = cfg.train_config(Stage::JointFinetune, supervision);
    let fps = cfg.dsp.reference.base.frames_per_second();
    run_stage(
        &exp,
        cfg,
        Stage::JointFinetune,
        |hook| joint_finetune(ck.state, &train, &validation, &tc, fps, hook),
        Some(supervision),
        Some(&validation),
    )
}

/// `evaluate`: scores a checkpoint on one split and writes the report.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    data: &Path,
    split: Split,
    out: &Path,
) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint, None, false)?;
    let split_data = load_split(data, split, &cfg.dsp)?;
    let supervision = supervision_of(split_data.mode);
    evaluate_into(cfg, &ck.state, &split_data, supervision, &sha256_file(checkpoint)?, out)
}

/// Scores `state`, adds the chance level, writes `report.json` and
/// `report.txt` under `out`.
pub fn evaluate_into(
    cfg: &ExperimentConfig,
    state: &ModelState,
    data: &SplitData,
    supervision: Supervision,
    checkpoint_hash: &str,
    out: &Path,
) -> Result<EvalReport> {
    let metrics = cfg.evaluation.metrics();
    let mut report = evaluate_split(state, data, &metrics, supervision)?;
    report.checkpoint_hash = checkpoint_hash.to_string();
    if cfg.evaluation.chance_runs > 0 {
        report.chance = Some(split_chance(data, &metrics, cfg.evaluation.chance_runs, cfg.training.seed)?);
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let exp = Experiment { dir: out.to_path_buf() };
    exp.write_json("report.json", &report)?;
    exp.write("report.txt", report.table().as_bytes())?;
    Ok(report)
}

/// `report`: human-readable summary of an experiment directory or a
/// report file.
pub fn cmd_report(path: &Path) -> Result<String> {
    let file = if path.is_dir() {
        [path.join("report.json"), path.join("summary.json"), path.join("build_report.json")]
            .into_iter()
            .find(|p| p.exists())
            .ok_or_else(|| Error::Data(format!("{} holds no report, summary or build report", path.display())))?
    } else {
        path.to_path_buf()
    };
    let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if name == "build_report.json" {
        let r: BuildReport = read_json(&file)?;
        return Ok(build_table(&r));
    }
    if let Ok(r) = read_json::<EvalReport>(&file) {
        return Ok(r.table());
    }
    if let Ok(s) = read_json::<StageSummary>(&file) {
        let mut out = format!(
            "{} in {}: best {} {:.4} at epoch {}/{}\n",
            s.stage,
            s.dir.display(),
            s.metric,
            s.best_metric,
            s.best_epoch,
            s.epochs
        );
        if let Some(i) = s.initial_metric {
            out += &format!("initial {} {i:.4}\n", s.metric);
        }
        if let Some(v) = &s.validation {
            out += &v.table();
        }
        return Ok(out);
    }
    if let Ok(r) = read_json::<crate::open_domain::OpenDomainReport>(&file) {
        return Ok(r.table());
    }
    Err(Error::Data(format!("{} is not a recognised report", file.display())))
}

/// Per-split sample counts, laid out like a dataset statistics table.
pub fn build_table(r: &BuildReport) -> String {
    let mut out = format!("{:<12} {:>11} {:>9} {:>9} {:>8}\n", "split", "soundscapes", "positive", "negative", "total");
    for (split, s) in &r.splits {
        out += &format!(
            "{:<12} {:>11} {:>9} {:>9} {:>8}\n",
            split.name(),
            s.soundscapes,
            s.positives,
            s.negatives,
            s.positives + s.negatives
        );
    }
    out
}

/// Distinct categories of the given names that the bank lacks.
pub fn unknown_categories(bank: &ClipBank, names: &[String]) -> Vec<String> {
    let known: BTreeSet<String> = bank.categories().into_iter().collect();
    names.iter().filter(|n| !known.contains(*n)).cloned().collect()
}
