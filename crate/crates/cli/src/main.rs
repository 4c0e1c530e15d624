mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "epic", version, about = "Federated lineage classification over monthly country shards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic TSV corpus from the config's [synthetic] section.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the federated protocol (and the centralized baseline).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Train clients on this many threads; results match serial runs.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Score a checkpoint on a TSV dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { config, out } => commands::cmd_gen(config, out),
        Command::Run { config, out_dir, parallel } => commands::cmd_run(config, out_dir.as_deref(), *parallel),
        Command::Eval { checkpoint, data, config } => commands::cmd_eval(checkpoint, data, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("epic: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
