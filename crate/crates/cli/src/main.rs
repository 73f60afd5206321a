use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use waveforce_cli::{run_pipeline, run_sweep, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "waveforce", version, about = "Steady water waves with vorticity and their flow-force flux")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for one config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the pipeline once per value of one parameter.
    Sweep {
        config: PathBuf,
        /// Parameter name (`s`, `froude`, `amplitude`, ...) or dotted path.
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the negative-control field (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Highest Sturm-Liouville mode index to compute (overrides `spectrum.modes`).
    #[arg(long)]
    modes: Option<usize>,
}

fn load(path: &PathBuf, common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(modes) = common.modes {
        cfg.spectrum.get_or_insert_with(Default::default).modes = modes;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.display().to_string();
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output.dir);
    Ok((cfg, out))
}

fn threads() -> Result<Option<usize>> {
    match std::env::var("WAVEFORCE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError(format!("WAVEFORCE_THREADS = {v:?} is not a positive integer")).into()),
        },
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, common } => {
            let (cfg, out) = load(&config, &common)?;
            let manifest = run_pipeline(&cfg, &out).with_context(|| format!("run into {}", out.display()))?;
            for s in &manifest.stages {
                println!("{:<18} {:?}{}", s.name, s.status, s.message.as_deref().map(|m| format!(": {m}")).unwrap_or_default());
            }
            if let Some(f) = manifest.first_failure() {
                eprintln!("stage `{}` failed: {}", f.name, f.message.as_deref().unwrap_or("unknown"));
            }
            Ok(manifest.succeeded())
        }
        Command::Sweep { config, param, values, common } => {
            let (cfg, out) = load(&config, &common)?;
            let entries = run_sweep(&cfg, &param, &values, &out, threads()?)?;
            for e in &entries {
                match &e.failed_stage {
                    None => println!("{param} = {}: ok ({})", e.value, e.dir),
                    Some(stage) => println!(
                        "{param} = {}: stage `{stage}` failed: {}",
                        e.value,
                        e.message.as_deref().unwrap_or("unknown")
                    ),
                }
            }
            Ok(entries.iter().all(|e| e.succeeded))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
