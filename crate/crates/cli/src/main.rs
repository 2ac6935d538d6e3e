mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::CliError;
use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "style-adapt", version, about = "Style-matching domain adaptation on a synthetic recognition task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// baseline, ps, sm, ps+sm or mmd.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Number of adaptation taps.
    #[arg(long, global = true)]
    lf: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Render the synthetic dataset and its protocols into --out.
    Datagen,
    /// Baseline training followed by adaptation in the configured mode.
    Train,
    /// Fit the domain discriminator on source versus target images.
    TrainDiscriminator,
    /// Embed the target evaluation set and compute every protocol.
    Eval,
    /// Train and evaluate every mode from one baseline checkpoint.
    Ablation,
    /// Check the Sinkhorn solver against exact transport.
    SinkhornCheck,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: String| cfg.set(k, &v).map_err(CliError::Config);
    if let Some(s) = cli.seed {
        set("seed", s.to_string())?;
    }
    if let Some(m) = &cli.mode {
        set("mode", m.clone())?;
    }
    if let Some(l) = cli.lf {
        set("lf", l.to_string())?;
    }
    if let Some(o) = &cli.out {
        set("out", o.display().to_string())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(&cli).and_then(|cfg| match cli.command {
        Command::Datagen => commands::datagen(&cfg),
        Command::Train => commands::train(&cfg),
        Command::TrainDiscriminator => commands::train_discriminator(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Ablation => commands::ablation(&cfg),
        Command::SinkhornCheck => commands::sinkhorn_check(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
