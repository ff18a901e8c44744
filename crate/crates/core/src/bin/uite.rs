use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use uncertain_ite::pipeline::{load_config, run_all, run_subcommand, ExperimentConfig, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Train,
    Predict,
    Evaluate,
    Policy,
    Enrich,
    Report,
    Gradcheck,
    /// Every stage in order.
    All,
    /// Print the effective config as JSON and exit.
    ShowConfig,
}

/// Uncertainty-aware treatment effect pipeline.
#[derive(Debug, Parser)]
#[command(name = "uite", version)]
struct Cli {
    command: Command,
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.max_epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> uncertain_ite::Result<()> {
    let sub = match cli.command {
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(cfg)?);
            return Ok(());
        }
        Command::All => {
            let m = run_all(cfg)?;
            println!("pipeline complete: {} artifacts in {}", m.files.len(), cfg.output_dir.display());
            return Ok(());
        }
        Command::Simulate => Subcommand::Simulate,
        Command::Train => Subcommand::Train,
        Command::Predict => Subcommand::Predict,
        Command::Evaluate => Subcommand::Evaluate,
        Command::Policy => Subcommand::Policy,
        Command::Enrich => Subcommand::Enrich,
        Command::Report => Subcommand::Report,
        Command::Gradcheck => Subcommand::Gradcheck,
    };
    let m = run_subcommand(sub, cfg)?;
    println!("{} done: {} artifacts in {}", sub.name(), m.files.len(), cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(cli.config.as_deref(), &cli.sets, cli.seed, cli.out.as_deref()).and_then(|cfg| run(&cli, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
