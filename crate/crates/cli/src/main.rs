//! `paud`: user-level membership auditing of text-generation models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "paud", version, about = "Audit whether a user's text was used to train a text-generation model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus described by the config.
    GenSynthetic(Common),
    /// Train the target model on the member users.
    TrainTarget(Common),
    /// Train the auditor's shadow models.
    TrainShadows(Common),
    /// Serve the target model over the line protocol.
    Serve(Common),
    /// Fit the audit model and audit every member and non-member.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Audit a served target at this address instead of the checkpoint.
        #[arg(long)]
        target: Option<String>,
    },
    /// Run the configured sweep, resuming from earlier results.
    Sweep(Common),
    /// Write the memorization analyses for the target model.
    Analyze(Common),
    /// Split sweep results into one file per metric.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Sweep CSV to read instead of the configured sweep's.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn load(c: &Common) -> Result<RunConfig, Failure> {
    let o = Overrides { seed: c.seed, out_dir: c.out_dir.clone() };
    RunConfig::load(&c.config, &o).map_err(Failure::Config)
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("PAUD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("PAUD_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let rt = |r: anyhow::Result<()>| r.map_err(Failure::Runtime);
    match cli.command {
        Command::GenSynthetic(c) => rt(commands::gen_synthetic(&load(&c)?)),
        Command::TrainTarget(c) => rt(commands::train_target(&load(&c)?)),
        Command::TrainShadows(c) => rt(commands::train_shadows(&load(&c)?)),
        Command::Serve(c) => rt(commands::serve(&load(&c)?)),
        Command::Audit { common, target } => {
            let mut cfg = load(&common)?;
            if target.is_some() {
                cfg.audit.target = target;
            }
            rt(commands::audit(&cfg))
        }
        Command::Sweep(c) => rt(commands::sweep(&load(&c)?)),
        Command::Analyze(c) => rt(commands::analyze(&load(&c)?)),
        Command::PlotData { common, input } => rt(commands::plot_data(&load(&common)?, input.as_deref())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
