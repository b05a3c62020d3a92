use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gmd_cli::commands::{self, RunOptions};
use gmd_cli::CliError;
use gmd_core::diagnostics::DEFAULT_WINDOW;
use gmd_core::par::Schedule;

#[derive(Parser)]
#[command(
    name = "gmd",
    version,
    about = "Multimodal training with gradient-guided modality decoupling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset described by a config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the generator seed.
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Train every configured seed and write run artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Runs only this seed.
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate saved models on every modality subset of the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Case filter: all, full, missing<d> or a comma list of those.
        #[arg(long, default_value = "all")]
        cases: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Summarize the conflict records of a run.
    Diag {
        /// Run directory (or conflicts.jsonl file).
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        quiet: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            config,
            out,
            seed_override,
            quiet,
        } => {
            commands::generate(
                &config,
                &RunOptions {
                    out,
                    seed_override,
                    quiet,
                    schedule: Schedule::default(),
                },
            )?;
        }
        Command::Train {
            config,
            out,
            seed_override,
            quiet,
        } => {
            commands::train(
                &config,
                &RunOptions {
                    out,
                    seed_override,
                    quiet,
                    schedule: Schedule::default(),
                },
            )?;
        }
        Command::Eval {
            model,
            config,
            cases,
            out,
            quiet,
        } => {
            let csv = commands::eval(&model, &config, &cases, out.as_deref(), Schedule::default())?;
            if out.is_none() || !quiet {
                print!("{csv}");
            }
        }
        Command::Diag {
            records,
            out,
            window,
            quiet,
        } => {
            for p in commands::diag(&records, out.as_deref(), window)? {
                if !quiet {
                    eprintln!("wrote {}", p.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
