use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tsdnet_core::corpus::{DatasetMode, Split};
use tsdnet_core::model::Fusion;
use tsdnet_core::train::MixupMode;

use tsdnet_cli::commands;
use tsdnet_cli::config::ExperimentConfig;
use tsdnet_cli::experiment::timestamped_dir;
use tsdnet_cli::open_domain::cmd_open_domain;
use tsdnet_cli::{exit_code, Overrides};

#[derive(Parser)]
#[command(name = "tsdnet", version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("TSDNET_GIT_DESCRIBE"), ")"), about = "Target sound detection workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// strong, strong+ or weak.
    #[arg(long, global = true)]
    mode: Option<DatasetMode>,
    /// concat or multiply.
    #[arg(long, global = true)]
    fusion: Option<Fusion>,
    /// off, fixed:<rate> or linear.
    #[arg(long, global = true)]
    mixup: Option<MixupMode>,
    /// Evaluation segment length in seconds.
    #[arg(long, global = true)]
    segment_length: Option<f64>,
    /// Output directory; defaults to a timestamped directory under
    /// $TSDNET_EXPERIMENT_ROOT (or ./experiments).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise soundscapes and write split manifests.
    BuildDataset,
    /// Pretrain the conditional network on the dataset's clip bank.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the detection network on top of a pretrained conditional net.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
    },
    /// Jointly fine-tune both networks.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Hold categories out of training and evaluate on them.
    OpenDomain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        held_out: Vec<String>,
    },
    /// Print a report, summary or build report.
    Report { path: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildDataset => "build-dataset",
            Command::Pretrain { .. } => "pretrain",
            Command::Train { .. } => "train",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::OpenDomain { .. } => "open-domain",
            Command::Report { .. } => "report",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let overrides = Overrides {
        seed: c.seed,
        mode: c.mode,
        fusion: c.fusion,
        mixup: c.mixup,
        segment_length: c.segment_length,
    };
    let cfg = overrides.apply(ExperimentConfig::load_or_default(c.config.as_deref())?)?;
    let out = c.out.clone().unwrap_or_else(|| timestamped_dir(cli.command.name()));
    let text = match &cli.command {
        Command::BuildDataset => commands::build_table(&commands::cmd_build_dataset(&cfg, &out)?),
        Command::Pretrain { data } => summary(commands::cmd_pretrain(&cfg, data, &out, &[])?)?,
        Command::Train { data, init } => summary(commands::cmd_train(&cfg, data, init, &out)?)?,
        Command::Finetune { data, init } => summary(commands::cmd_finetune(&cfg, data, init, &out)?)?,
        Command::Evaluate { checkpoint, data, split } => {
            commands::cmd_evaluate(&cfg, checkpoint, data, *split, &out)?.table()
        }
        Command::OpenDomain { data, held_out } => cmd_open_domain(&cfg, data, held_out, &out)?.table(),
        Command::Report { path } => commands::cmd_report(path)?,
    };
    print!("{text}");
    if !matches!(cli.command, Command::Report { .. }) {
        log::info!("wrote {}", out.display());
    }
    Ok(())
}

fn summary(s: commands::StageSummary) -> anyhow::Result<String> {
    commands::cmd_report(&s.dir.join("summary.json")).context("reading back the stage summary")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
