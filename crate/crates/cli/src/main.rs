use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use setransformer_cli::commands::{self, CliError};
use setransformer_cli::config::RunConfig;

/// SETransformer activity-recognition pipeline.
///
/// Settings come from built-in defaults, then the config file (`--config`,
/// or `$SETRANSFORMER_CONFIG_DIR/setransformer.conf`), then trailing
/// `key=value` overrides.
#[derive(Parser)]
#[command(name = "setr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides, e.g. `epochs=5 out_dir=runs/a`.
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Raw accelerometer text to a windowed, normalized dataset file.
    Preprocess(RunArgs),
    /// Generate a synthetic dataset file.
    Synth(RunArgs),
    /// Train on a dataset file; writes checkpoints, trace.jsonl and a confusion CSV.
    Train(RunArgs),
    /// Score a checkpoint on a dataset split; writes metrics.json and confusion.csv.
    Evaluate(RunArgs),
    /// Compare backpropagated gradients with central differences (64-bit).
    Gradcheck(RunArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let (args, run): (&RunArgs, fn(&RunConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Preprocess(a) => (a, commands::preprocess),
        Command::Synth(a) => (a, commands::synth),
        Command::Train(a) => (a, commands::train),
        Command::Evaluate(a) => (a, commands::evaluate),
        Command::Gradcheck(a) => (a, commands::gradcheck),
    };
    let result = RunConfig::load(args.config.as_deref(), &args.overrides)
        .map_err(|e| CliError::Usage(e.to_string()))
        .and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
