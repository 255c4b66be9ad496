use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
[corpus]
train = 8
validation = 4
test = 4
toy_clips_per_category = 12

[training.pretrain]
learning_rate = 0.001
epochs = 1

[training.detection]
learning_rate = 0.001
epochs = 1

[training.finetune]
learning_rate = 0.0001
epochs = 1

[evaluation]
chance_runs = 2
"#;

fn tsdnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsdnet"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("TSDNET_EXPERIMENT_ROOT", dir.join("experiments"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workdir(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_writes_reproducible_experiment_dirs() {
    let dir = workdir(TINY);
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = tsdnet(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
        String::from_utf8(out.stdout).unwrap()
    };
    let table = run(&["--config", "c.toml", "build-dataset", "--out", "ds"]);
    assert!(table.contains("train"), "{table}");
    run(&["--config", "c.toml", "pretrain", "--data", "ds", "--out", "pre"]);
    run(&["--config", "c.toml", "train", "--data", "ds", "--init", "pre/best.ckpt", "--out", "tr"]);
    run(&["--config", "c.toml", "finetune", "--data", "ds", "--init", "tr/best.ckpt", "--out", "ft"]);
    let report = run(&["--config", "c.toml", "evaluate", "--checkpoint", "ft/best.ckpt", "--data", "ds", "--out", "ev"]);
    assert!(report.contains("macro") && report.contains("chance"), "{report}");
    assert_eq!(run(&["report", "ev"]), report);

    for stage in ["pre", "tr", "ft"] {
        let s = d.join(stage);
        for f in ["config.toml", "meta.json", "steps.jsonl", "epochs.jsonl", "best.ckpt", "last.ckpt", "summary.json"] {
            assert!(s.join(f).exists(), "{stage}/{f}");
        }
        assert!(s.join("checkpoints/epoch-001.ckpt").exists(), "{stage}");
        let meta = json(&s.join("meta.json"));
        assert_eq!(meta["seed"], 0);
        assert!(meta["version"].as_str().unwrap().starts_with("tsdnet "));
        assert_eq!(meta["manifests"].as_object().unwrap().len(), 3);
    }
    // The snapshot reloads to the same configuration.
    let snap = std::fs::read_to_string(d.join("tr/config.toml")).unwrap();
    let cfg = tsdnet_cli::config::ExperimentConfig::from_toml(&snap).unwrap();
    assert_eq!(cfg.training.detection.epochs, 1);
    assert_eq!(json(&d.join("ft/meta.json"))["init_checkpoint"].as_str().unwrap().len(), 64);
}

#[test]
fn flags_override_the_file_and_default_dirs_are_timestamped() {
    let dir = workdir(TINY);
    let out = tsdnet(dir.path(), &["--config", "c.toml", "--seed", "5", "--mode", "weak", "build-dataset"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let made: Vec<_> = std::fs::read_dir(dir.path().join("experiments")).unwrap().collect();
    assert_eq!(made.len(), 1);
    let exp = made[0].as_ref().unwrap().path();
    assert!(exp.file_name().unwrap().to_str().unwrap().starts_with("build-dataset-"));
    let snap = std::fs::read_to_string(exp.join("config.toml")).unwrap();
    let cfg = tsdnet_cli::config::ExperimentConfig::from_toml(&snap).unwrap();
    assert_eq!(cfg.corpus.seed, 5);
    assert_eq!(cfg.corpus.mode.to_string(), "weak");
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = workdir("[training]\nlearnin_rate = 0.1\n");
    let out = tsdnet(dir.path(), &["--config", "c.toml", "build-dataset", "--out", "ds"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("learnin_rate"));

    let dir = workdir(TINY);
    assert_eq!(code(&tsdnet(dir.path(), &["--mixup", "sometimes", "build-dataset"])), 2);
    assert_eq!(code(&tsdnet(dir.path(), &["--fusion", "add", "build-dataset"])), 2);
    assert_eq!(code(&tsdnet(dir.path(), &["--segment-length", "0", "build-dataset"])), 2);
    assert_eq!(code(&tsdnet(dir.path(), &["no-such-command"])), 2);
    let missing = tsdnet(dir.path(), &["train", "--data", "ds", "--init", "nope.ckpt", "--out", "tr"]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("tsdnet pretrain"), "{}", stderr(&missing));
}

#[test]
fn wrong_stage_and_unknown_categories_are_configuration_errors() {
    let dir = workdir(TINY);
    let d = dir.path();
    assert_eq!(code(&tsdnet(d, &["--config", "c.toml", "build-dataset", "--out", "ds"])), 0);
    assert_eq!(code(&tsdnet(d, &["--config", "c.toml", "pretrain", "--data", "ds", "--out", "pre"])), 0);
    let ft = tsdnet(d, &["--config", "c.toml", "finetune", "--data", "ds", "--init", "pre/best.ckpt", "--out", "ft"]);
    assert_eq!(code(&ft), 2);
    assert!(stderr(&ft).contains("tsdnet train"), "{}", stderr(&ft));
    let od = tsdnet(d, &["--config", "c.toml", "open-domain", "--data", "ds", "--held-out", "tone0,harp", "--out", "od"]);
    assert_eq!(code(&od), 2);
    assert!(stderr(&od).contains("harp"), "{}", stderr(&od));
}

#[test]
fn data_errors_exit_with_three() {
    let dir = workdir(TINY);
    assert_eq!(code(&tsdnet(dir.path(), &["report", "missing.json"])), 3);
    assert_eq!(code(&tsdnet(dir.path(), &["--config", "c.toml", "pretrain", "--data", "nowhere", "--out", "p"])), 3);
}

#[test]
fn divergence_exits_with_four() {
    let config = TINY.replace("[training.pretrain]\nlearning_rate = 0.001", "[training.pretrain]\nlearning_rate = 1e300");
    let dir = workdir(&config);
    let d = dir.path();
    assert_eq!(code(&tsdnet(d, &["--config", "c.toml", "build-dataset", "--out", "ds"])), 0);
    let out = tsdnet(d, &["--config", "c.toml", "pretrain", "--data", "ds", "--out", "pre"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn open_domain_split_excludes_held_out_mixtures() {
    let dir = workdir(TINY);
    let d = dir.path();
    assert_eq!(code(&tsdnet(d, &["--config", "c.toml", "build-dataset", "--out", "ds"])), 0);
    let held = vec!["tone0".to_string(), "chirp1".to_string()];
    let split = tsdnet_cli::open_domain::make_split(&d.join("ds"), &held, &d.join("split")).unwrap();
    let leaks = tsdnet_cli::open_domain::verify_split(&d.join("ds"), &d.join("split"), &split.held_out).unwrap();
    assert!(leaks.is_empty(), "{leaks:?}");
    // The unfiltered training split does contain them.
    let all = tsdnet_cli::open_domain::verify_split(&d.join("ds"), &d.join("ds"), &split.held_out).unwrap();
    assert!(!all.is_empty());
    let test_manifest = tsdnet_core::corpus::manifest_path(&d.join("split"), tsdnet_core::corpus::Split::Test);
    let test = tsdnet_core::corpus::read_manifest(&test_manifest).unwrap();
    assert!(test.iter().all(|r| held.contains(&r.target_category)));
}
