//! End-to-end desk run on the synthetic corpus: build, pretrain, train,
//! evaluate. Usage:
//! `desk_run <dir> [detection epochs] [pretrain epochs] [strong+|weak] [off|linear|fixed:r]`.

use std::path::PathBuf;
use std::time::Instant;

use tsdnet_core::corpus::{build_dataset, synth_toy_bank, BuildConfig, DatasetMode, Split, SplitSizes};
use tsdnet_core::eval::evaluate_split;
use tsdnet_core::model::{ModelConfig, ModelState, Supervision};
use tsdnet_core::train::{
    load_bank_split, load_split, pretrain_conditional, train_detection, FeatureSettings, MixupMode, Stage,
    TrainConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let root = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("/tmp/desk_run"));
    let det_epochs: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let pre_epochs: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(20);
    let mode: DatasetMode = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(DatasetMode::StrongPlus);
    let mixup: MixupMode = args.get(5).map(|s| s.parse()).transpose()?.unwrap_or(MixupMode::Linear);
    let supervision = if mode.is_weak() { Supervision::Weak } else { Supervision::Strong };
    let t0 = Instant::now();

    let toy = synth_toy_bank(7, 6, 24)?;
    let sizes = SplitSizes {
        train: 180,
        validation: 40,
        test: 40,
    };
    let cfg = BuildConfig::new(mode, sizes, 7);
    build_dataset(&toy.bank, &cfg, &root)?;
    println!("build {:.1}s", t0.elapsed().as_secs_f64());

    let feats = FeatureSettings::default();
    let train = load_split(&root, Split::Train, &feats)?;
    let val = load_split(&root, Split::Validation, &feats)?;
    let bank_train = load_bank_split(&toy.bank, Split::Train, &feats)?;
    let bank_val = load_bank_split(&toy.bank, Split::Validation, &feats)?;
    println!("features {:.1}s, {} train samples", t0.elapsed().as_secs_f64(), train.len());

    let model = ModelConfig::desk(toy.bank.categories());
    let state = ModelState::init(model, 1)?;
    let mut pc = TrainConfig::for_stage(Stage::PretrainConditional);
    pc.epochs = pre_epochs;
    let fps = feats.reference.base.frames_per_second();
    let t = Instant::now();
    let pre = pretrain_conditional(state, &bank_train, &bank_val, &pc, fps, &mut |r, _, _| {
        println!(
            "  epoch {} loss {:.3} train {:.3} val {:.3}",
            r.epoch,
            r.mean_loss,
            r.train_accuracy.unwrap_or(0.0),
            r.validation
        );
        Ok(())
    })?;
    println!(
        "pretrain {:.1}s best acc {:.3} @ {}",
        t.elapsed().as_secs_f64(),
        pre.best_metric,
        pre.best_epoch
    );

    let mut dc = TrainConfig::for_stage(Stage::TrainDetection);
    dc.epochs = det_epochs;
    dc.supervision = supervision;
    dc.mixup.mode = mixup;
    let t = Instant::now();
    let det = train_detection(pre.best, &train, &val, &dc, &mut |r, _, _| {
        println!("  epoch {} loss {:.3} val {:.4} ({:.1}s)", r.epoch, r.mean_loss, r.validation, t.elapsed().as_secs_f64());
        Ok(())
    })?;
    println!("detection {:.1}s best {:.4} @ {}", t.elapsed().as_secs_f64(), det.best_metric, det.best_epoch);
    let rep = evaluate_split(&det.best, &val, &dc.metrics, supervision)?;
    print!("{}", rep.table());
    Ok(())
}
