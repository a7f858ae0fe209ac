mod commands;
mod config;
mod io;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use crate::config::{Globals, UsageError};

/// Semantic-basis analysis, latent transforms and data-free model merging.
#[derive(Parser, Debug)]
#[command(name = "seme", version, propagate_version = true)]
struct Cli {
    /// JSON config file; its "command" field must name the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for randomized steps. Defaults to 0 and is always recorded.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Refuse to run a randomized command without an explicit seed.
    #[arg(long, global = true)]
    strict_seed: bool,

    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "SEME_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List tensors, shapes and metadata of an archive.
    Inspect(commands::inspect::InspectOpts),
    /// Compute the semantic bases of a bundle's LM-head.
    Bases(commands::bases::BasesOpts),
    /// Measure how parallel representations are to their decomposition resultants.
    Validate(commands::validate::ValidateOpts),
    /// Carry representations into another model's latent space.
    Transform(commands::transform::TransformOpts),
    /// Merge models against a pivot.
    Merge(commands::merge::MergeOpts),
    /// Align token sequences and optionally build a vocabulary mapping.
    Align(commands::align::AlignOpts),
    /// Fuse two distribution matrices against a reference sequence.
    Fuse(commands::fuse::FuseOpts),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let name = match &cli.command {
        Command::Inspect(_) => "inspect",
        Command::Bases(_) => "bases",
        Command::Validate(_) => "validate",
        Command::Transform(_) => "transform",
        Command::Merge(_) => "merge",
        Command::Align(_) => "align",
        Command::Fuse(_) => "fuse",
    };
    let file = config::load(cli.config.as_deref(), name)?;
    let globals = Globals::resolve(cli.seed, cli.threads, cli.strict_seed, &file)?;
    if let Some(n) = globals.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(format!("thread pool: {e}")))?;
    }
    let body = file.body;
    match cli.command {
        Command::Inspect(o) => commands::inspect::run(o, body, &globals),
        Command::Bases(o) => commands::bases::run(o, body, &globals),
        Command::Validate(o) => commands::validate::run(o, body, &globals),
        Command::Transform(o) => commands::transform::run(o, body, &globals),
        Command::Merge(o) => commands::merge::run(o, body, &globals),
        Command::Align(o) => commands::align::run(o, body, &globals),
        Command::Fuse(o) => commands::fuse::run(o, body, &globals),
    }
}
