//! Command line driver: `kaclab <command> <config.toml> [--seed S] [--out DIR] [--threads T]`.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails or a run
//! aborts, 2 for configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use kaclab_cli::commands;
use kaclab_cli::config::{CommandKind, ExperimentConfig};
use kaclab_cli::error::{CliError, CliResult};
use kaclab_cli::output::OutputDir;

#[derive(Parser)]
#[command(name = "kaclab", version, about = "Landau particle system experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble and write per-run and aggregate CSVs.
    Simulate(Common),
    /// Run the entropy and Fisher dissipation suite on random mixtures.
    VerifyDissipation(Common),
    /// Compare the simulator against a closed-form oracle.
    Oracle(Common),
    /// Measure the chaos distance along a ladder of particle counts.
    Chaos(Common),
    /// Weak-form hierarchy residuals along a ladder of particle counts.
    Hierarchy(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    config: PathBuf,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(kind: CommandKind, args: &Common) -> CliResult<bool> {
    let (mut cfg, _) = ExperimentConfig::load(&args.config)?;
    cfg.check_command(kind)?;
    cfg.command = Some(kind);
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = Some(o.clone());
    }
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure threads: {e}")))?;
    }
    let root = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    // The stored config has the output path removed so that it hashes the
    // same wherever the results are written.
    let mut stored = cfg.clone();
    stored.out = None;
    let config_toml = stored.to_toml()?;
    let mut out = OutputDir::create(&root)?;
    let pass = match kind {
        CommandKind::Simulate => commands::simulate(&cfg, &mut out)?,
        CommandKind::VerifyDissipation => commands::verify_dissipation(&cfg, &mut out)?,
        CommandKind::Oracle => commands::oracle(&cfg, &mut out)?,
        CommandKind::Chaos => commands::chaos(&cfg, &mut out)?,
        CommandKind::Hierarchy => commands::hierarchy(&cfg, &mut out)?,
    };
    log::info!("results in {}", out.root().display());
    out.finish(kind.name(), cfg.seed, &config_toml)?;
    Ok(pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Simulate(a) => (CommandKind::Simulate, a),
        Command::VerifyDissipation(a) => (CommandKind::VerifyDissipation, a),
        Command::Oracle(a) => (CommandKind::Oracle, a),
        Command::Chaos(a) => (CommandKind::Chaos, a),
        Command::Hierarchy(a) => (CommandKind::Hierarchy, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            println!("{}: checks failed", kind.name());
            ExitCode::from(1)
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
