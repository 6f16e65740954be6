//! `weakkam`: runs a pipeline stage from a JSON experiment config.
//!
//! Exit status: 0 when every check passes, 2 when some check fails (the
//! verdict file lists which), 1 on configuration or execution errors.

mod config;
mod report;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::ExperimentConfig;
use stages::{Command, Pipeline};

#[derive(Debug, Parser)]
#[command(name = "weakkam", version = report::VERSION, about = "Vanishing-viscosity selection experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    command: Command,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed, overriding the config's seeds.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<bool, String> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| format!("{}: {e}", cli.config.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| format!("invalid config: {e}"))?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err("--workers must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    let dir = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.directory));

    let mut pipeline = Pipeline::new(&cfg);
    let outputs = pipeline.run(cli.command).map_err(|e| format!("{} failed: {e}", cli.command.name()))?;
    let written = report::emit(&cfg, &dir, cli.command, &outputs, &pipeline.wall_times)
        .map_err(|e| format!("cannot write reports to {}: {e}", dir.display()))?;

    let mut pass = true;
    for s in &outputs {
        for (name, ok) in &s.checks {
            println!("{} {}.{name}", if *ok { "PASS" } else { "FAIL" }, s.command.name());
            pass &= ok;
        }
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
