//! `dcfae` command-line entry point.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or config error,
//! 3 dataset or log failure, 4 numeric abort, 5 checkpoint mismatch.

mod commands;
mod config;
mod exit;
mod png;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use exit::{CliError, Code};

#[derive(Parser)]
#[command(name = "dcfae", version, about = "Deep clustering with a fusion autoencoder")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; suffixed -1, -2, ... if it already holds files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted-path override, e.g. `--set augment.enabled=false`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Force serial, bit-reproducible execution.
    #[arg(long, global = true)]
    reference_mode: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train, fine-tune and cluster.
    Train {
        /// Continue from a checkpoint, optimizer state included.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Clustering metrics of a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Independent k-means runs; per-run rows plus the mean.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Write clustering features as CSV.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Latent means instead of head embeddings.
        #[arg(long)]
        latent: bool,
    },
    /// Decode draws from the prior into an image grid.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        grid: usize,
    },
    /// Originals next to their reconstructions.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        grid: usize,
    },
    /// Summarize and plot the equilibrium scores of a training log.
    Monitor {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long, default_value_t = 0.15)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides;
    // `sample` reads the seed directly so it can run from a bare checkpoint
    if let (Some(s), false) = (cli.seed, matches!(cli.command, Command::Sample { .. })) {
        overrides.push(format!("seed={s}"));
    }
    if cli.reference_mode {
        overrides.push("reference_mode=true".into());
    }
    let name = match &cli.command {
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Embed { .. } => "embed",
        Command::Sample { .. } => "sample",
        Command::Reconstruct { .. } => "reconstruct",
        Command::Monitor { .. } => "monitor",
    };
    let ctx = Ctx {
        config: cli.config,
        overrides,
        out: cli.out.unwrap_or_else(|| PathBuf::from("runs").join(name)),
        json: cli.json,
    };
    match cli.command {
        Command::Train { resume } => commands::train(&ctx, resume.as_deref()),
        Command::Eval { checkpoint, repeats } => commands::eval(&ctx, &checkpoint, repeats),
        Command::Embed { checkpoint, latent } => commands::embed(&ctx, &checkpoint, latent),
        Command::Sample { checkpoint, grid } => commands::sample(&ctx, &checkpoint, grid, cli.seed),
        Command::Reconstruct { checkpoint, grid } => commands::reconstruct(&ctx, &checkpoint, grid),
        Command::Monitor { log, window, tolerance } => commands::monitor(&ctx, &log, window, tolerance),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Code::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.code == Code::Usage {
                eprintln!("usage: dcfae --config <FILE> [--set KEY=VALUE]... <COMMAND>  (see --help)");
            }
            e.exit_code()
        }
    }
}
