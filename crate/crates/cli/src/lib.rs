//! File formats, configuration, dataset handling and the `dsu` command line
//! on top of `dsu-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod image_io;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{EvalSplit, Predictions};
use crate::config::Config;
pub use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "dsu",
    version,
    about = "Depth-disentangled pseudo-label refinement for RGB-D saliency"
)]
struct Cli {
    /// `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Config override, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic RGB-D dataset into --out.
    Synth(SynthArgs),
    /// Write round-0 pseudo-labels for the training split.
    InitLabels(DataArgs),
    /// Train for the configured number of rounds.
    Train(TrainArgs),
    /// Run one label update from a checkpoint.
    UpdateLabels(UpdateArgs),
    /// Compute metrics for a checkpoint or a directory of maps.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    eval: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    corruption: Option<f32>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset root.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Initial labels [default: <out>/labels/r0].
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    update: Option<String>,
}

#[derive(Debug, Args)]
struct UpdateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Current labels, usually `<run>/labels/r{k}`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    update: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
    All,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "pred", required_unless_present = "pred")]
    checkpoint: Option<PathBuf>,
    /// Directory of saliency maps named by sample id.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "eval")]
    split: SplitArg,
}

fn overrides(cli: &Cli) -> Vec<String> {
    let mut out = cli.set.clone();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push(format!("{k}={v}"));
        }
    };
    let s = |v: Option<usize>| v.map(|x| x.to_string());
    match &cli.command {
        Command::Synth(a) => {
            push("synth.samples", s(a.samples));
            push("synth.eval", s(a.eval));
            push("synth.size", s(a.size));
            push("synth.corruption", a.corruption.map(|x| x.to_string()));
        }
        Command::Train(a) => {
            push("rounds", s(a.rounds));
            push("tau", s(a.tau));
            push("batch", s(a.batch));
            push("lr", a.lr.map(|x| x.to_string()));
            push("weighting", a.weighting.clone());
            push("update", a.update.clone());
        }
        Command::UpdateLabels(a) => push("update", a.update.clone()),
        Command::InitLabels(_) | Command::Eval(_) => {}
    }
    push("seed", cli.seed.map(|x| x.to_string()));
    out
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let cfg = Config::load(cli.config.as_deref(), &overrides(&cli))?;
    cfg.validate()?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth(_) => commands::synth(&cfg, out),
        Command::InitLabels(a) => commands::init_labels(&cfg, &a.data, out),
        Command::Train(a) => commands::train(&cfg, &a.data, a.labels.as_deref(), out),
        Command::UpdateLabels(a) => {
            commands::update_labels(&cfg, &a.data, &a.checkpoint, &a.labels, out)
        }
        Command::Eval(a) => {
            let preds = match (&a.checkpoint, &a.pred) {
                (Some(c), _) => Predictions::Checkpoint(c),
                (None, Some(p)) => Predictions::Directory(p),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let split = match a.split {
                SplitArg::Train => EvalSplit::Train,
                SplitArg::Eval => EvalSplit::Eval,
                SplitArg::All => EvalSplit::All,
            };
            let m = commands::eval(&cfg, &a.data, preds, split, out)?;
            println!(
                "mae {:.4}  f_max {:.4}  f_mean {:.4}  f_weighted {:.4}  e_measure {:.4}",
                m.mae, m.f_max, m.f_mean, m.f_weighted, m.e_measure
            );
            Ok(())
        }
    }
}
