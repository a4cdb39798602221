//! skill-loom: skill-centric distillation data curation pipeline.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, PipelineConfig};
use crate::error::StageError;
use crate::stages::StageContext;

#[derive(Parser)]
#[command(
    name = "skill-loom",
    version,
    about = "Curate distillation SFT data by skill: attribute problems to a skill tree, \
             profile a student's per-skill accuracy, sample its weak skills, and emit \
             skill-chain-augmented training records."
)]
struct Cli {
    /// Pipeline configuration file (flat TOML; relative paths resolve
    /// against its directory).
    #[arg(long, global = true, default_value = "skill-loom.toml")]
    config: PathBuf,
    /// Override the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the request concurrency limit.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// Override the artifact output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the teacher corpus and apply the filtering stages.
    Filter,
    /// Attribute each filtered problem to skill chains via the labeler.
    Attribute,
    /// Profile the student's per-skill accuracy over the corpus.
    Profile,
    /// Draw the weakness-weighted training subset.
    Sample,
    /// Emit skill-chain-augmented SFT records for the sampled subset.
    Augment,
    /// Run the student on a benchmark and report Avg@k.
    Evaluate,
    /// Run the synthetic-student closed loop comparing sampling policies.
    Simulate,
    /// filter -> attribute -> profile -> sample -> augment.
    Pipeline,
}

fn run(cli: &Cli) -> Result<(), StageError> {
    let overrides = Overrides {
        seed: cli.seed,
        max_in_flight: cli.max_in_flight,
        out_dir: cli.out.clone(),
    };
    let config = PipelineConfig::load(&cli.config, &overrides)?;
    let ctx = StageContext::new(config);
    match cli.command {
        Command::Filter => stages::run_filter(&ctx),
        Command::Attribute => stages::run_attribute(&ctx),
        Command::Profile => stages::run_profile(&ctx),
        Command::Sample => stages::run_sample(&ctx),
        Command::Augment => stages::run_augment(&ctx),
        Command::Evaluate => stages::run_evaluate(&ctx),
        Command::Simulate => stages::run_simulate(&ctx),
        Command::Pipeline => stages::run_pipeline(&ctx),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_max_level(tracing::Level::INFO)
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
