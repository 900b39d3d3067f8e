use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hinembed::cli::{self, Overrides};

/// Multi-source heterogeneous network embedding trainer.
#[derive(Parser)]
#[command(name = "hinembed", version)]
struct Args {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides [output] dir in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed (overrides [train] seed in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread hint; execution is sequential and deterministic.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest triple files, write the binary graph and a stats table.
    Prepare,
    /// Train embeddings; a lambda grid expands into sub-runs.
    Train,
    /// Inductive link prediction (and optional node classification).
    Evaluate {
        /// Trained embedding store (default: <out>/final.emb).
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Per-source-pair divergence table and labeled embedding CSV.
    Report {
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Plain entity/relation embedding CSVs.
    Export {
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let ov = Overrides {
        out: args.out.clone(),
        seed: args.seed,
        threads: args.threads,
    };
    let config = match &args.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --config is required");
            return ExitCode::from(2);
        }
    };
    let result = match &args.command {
        Command::Prepare => cli::cmd_prepare(&config, &ov),
        Command::Train => cli::cmd_train(&config, &ov),
        Command::Evaluate { store } => {
            cli::cmd_evaluate(&config, store.as_deref(), &ov)
        }
        Command::Report { store } => {
            cli::cmd_report(&config, store.as_deref(), &ov)
        }
        Command::Export { store } => {
            cli::cmd_export(&config, store.as_deref(), &ov)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
