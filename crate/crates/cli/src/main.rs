//! `formstab`: stability analysis and simulation of delayed formation control.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::Value;

use commands::Failure;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Delay-independent class of every mode and the switching delays.
    Classify,
    /// Asymptotic continuous spectrum of every mode.
    Acs,
    /// Characteristic roots in a window.
    Spectrum,
    /// Stability boundaries in a parameter plane.
    Bifurcation,
    /// Master stability field, boundary and large-delay asymptote.
    Msf,
    /// Direct simulation of the formation.
    Simulate,
}

#[derive(Debug, Parser)]
#[command(name = "formstab", version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a configuration entry, e.g. `--set delay.tau=5.7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (takes precedence over `output.directory`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<PathBuf, Failure> {
    let input = |m: String| Failure::Input(m);
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| input(format!("cannot read {}: {e}", cli.config.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| input(format!("{}: invalid JSON: {e}", cli.config.display())))?;
    for o in &cli.overrides {
        config::apply_override(&mut doc, o).map_err(|e| input(e.0))?;
    }
    if let Some(out) = &cli.out {
        config::apply_override(&mut doc, &format!("output.directory={}", Value::from(out.display().to_string())))
            .map_err(|e| input(e.0))?;
    }
    let cfg = config::parse(&doc).map_err(|e| input(e.0))?;
    let resolved = config::resolved(&cfg);
    let hash = config::hash(&resolved);
    let dir = PathBuf::from(&cfg.output.directory);
    let name = cli.command.to_possible_value().expect("named command").get_name().to_string();
    let mut artifacts = output::Artifacts::new(&dir, &name, resolved, hash)?;
    match cli.command {
        Command::Classify => commands::classify(&cfg, &mut artifacts),
        Command::Acs => commands::acs(&cfg, &mut artifacts),
        Command::Spectrum => commands::spectrum(&cfg, &mut artifacts),
        Command::Bifurcation => commands::bifurcation(&cfg, &mut artifacts),
        Command::Msf => commands::msf(&cfg, &mut artifacts),
        Command::Simulate => commands::simulate(&cfg, &mut artifacts),
    }?;
    artifacts.finish()?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
