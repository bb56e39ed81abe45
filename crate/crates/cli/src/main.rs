mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splicegan::losses::ReconMode;
use splicegan::nn::Preset;
use splicegan::Error;

/// Splicing detection and localization with a conditional GAN.
#[derive(Parser, Debug)]
#[command(name = "splicegan", version)]
struct Cli {
    /// Worker threads for data-parallel stages [default: logical cores]
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Global seed; overrides the config file
    #[arg(long, global = true, env = "SPLICEGAN_SEED")]
    seed: Option<u64>,

    /// Experiment config (JSON with optional `synth`, `train` and `eval` sections)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory of the subcommand
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a forgery corpus and its manifest
    Synth(SynthArgs),
    /// Train the generator/discriminator pair on a manifest
    Train(TrainArgs),
    /// Estimate masks and detection labels for images
    Infer(InferArgs),
    /// Score a checkpoint (or precomputed masks) on a manifest split
    Eval(EvalArgs),
    /// Overlay ROC curves of finished evaluations
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Corpus size relative to the reference composition
    #[arg(long)]
    scale: Option<f64>,
    /// Directory of base PNGs used instead of procedural textures
    #[arg(long)]
    bases: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    Bce,
    L1,
}

impl From<LossArg> for ReconMode {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bce => ReconMode::Bce,
            LossArg::L1 => ReconMode::L1,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Standard,
    Tiny,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Standard => Preset::Standard,
            PresetArg::Tiny => Preset::Tiny,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus manifest with train/validation splits
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Reconstruction loss
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Network widths
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Continue from this checkpoint; its config is the base when --config is absent
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Checkpoint file, or a run directory (uses its best checkpoint)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Images to process
    images: Vec<PathBuf>,
    /// Process a manifest split instead of explicit images
    #[arg(long, conflicts_with = "images")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test", requires = "manifest")]
    split: String,
    /// Detection threshold T on the 0..255 score scale
    #[arg(long, conflicts_with = "summary")]
    threshold: Option<f64>,
    /// Take T from an evaluation summary.json
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Pixel threshold for binary masks [default: config or 0.5]
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint file or run directory
    #[arg(long, conflicts_with_all = ["estimates", "compare"])]
    checkpoint: Option<PathBuf>,
    /// Directory of precomputed soft masks named `<id>.png`
    #[arg(long, conflicts_with = "compare")]
    estimates: Option<PathBuf>,
    /// Evaluate several checkpoints or run directories (`[LABEL=]PATH`) and overlay their ROC curves
    #[arg(long, num_args = 1..)]
    compare: Vec<String>,
    #[arg(long)]
    manifest: PathBuf,
    /// Split to evaluate [default: config or test]
    #[arg(long)]
    split: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CurveKind {
    Detection,
    Localization,
    Both,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Evaluation directories written by `eval`
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    kind: CurveKind,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NoDetectedForgeries(_) | Error::DegenerateLabels | Error::NoPositives => 3,
        Error::Missing(_) => 4,
        _ => 2,
    }
}

fn run(cli: Cli) -> splicegan::Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    }
    let cfg = config::load(cli.config.as_deref())?;
    let ctx = commands::Context {
        seed: cli.seed,
        out: cli.out,
        config: cfg,
        config_file: cli.config.is_some(),
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Infer(a) => commands::infer(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Plot(a) => commands::plot(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("splicegan: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
