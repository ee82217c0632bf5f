//! `ginc`: build mixture-of-HMMs pretraining data, sample in-context
//! prompts, evaluate the exact Bayesian predictor, and run the theory
//! checks. Every subcommand is deterministic given its config and seed and
//! writes a manifest describing the run.

mod commands;
mod config;
mod manifest;
mod plot;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use commands::ablate::AblateMode;
use config::ExperimentConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ginc", version, about = "Mixture-of-HMMs in-context learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Reduce sample counts for desk-scale runs.
    #[arg(long)]
    quick: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate pretraining corpora (train + validation).
    GenCorpus(RunArgs),
    /// Generate labelled prompt files over the (k, n) grid.
    GenPrompts(RunArgs),
    /// Evaluate in-context accuracy over the (k, n) grid.
    Eval(RunArgs),
    /// Mixture-structure ablations.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Which ablation to run.
        #[arg(long, value_enum)]
        mode: AblateMode,
    },
    /// Accuracy of every ordering of a few fixed example sets.
    Permutations(RunArgs),
    /// Zero-shot vs few-shot under the low-temperature config.
    ZeroVsFew(RunArgs),
    /// Constants, positional KL table, distinguishability verdicts, bounds.
    Theory(RunArgs),
}

type Runner = Box<dyn FnOnce(&ExperimentConfig, &std::path::Path) -> Result<manifest::RunManifest>>;

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (args, runner): (&RunArgs, Runner) =
        match &cli.command {
            Command::GenCorpus(args) => (args, Box::new(commands::gen_corpus::run)),
            Command::GenPrompts(args) => (args, Box::new(commands::gen_prompts::run)),
            Command::Eval(args) => (args, Box::new(commands::eval::run)),
            Command::Ablate { run, mode } => {
                let mode = *mode;
                (run, Box::new(move |config, out| commands::ablate::run(config, out, mode)))
            }
            Command::Permutations(args) => (args, Box::new(commands::permutations::run)),
            Command::ZeroVsFew(args) => (args, Box::new(commands::zero_vs_few::run)),
            Command::Theory(args) => (args, Box::new(commands::theory_cmd::run)),
        };

    let config = ExperimentConfig::load(args.config.as_deref(), args.seed, args.quick)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let manifest = runner(&config, &args.out)?;
    let path = manifest.write(&args.out)?;
    println!("manifest written to {}", path.display());
    Ok(())
}
