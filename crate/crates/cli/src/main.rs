//! `treegibbs` command line: one experiment per invocation, driven by a JSON config.

mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{Failure, Output};
use config::{Experiment, ExperimentConfig};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "treegibbs", version, about = "Exact, expansion and sampling experiments for spin models on Cayley trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// experiment config (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory, overrides `output.dir`
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed, overrides `mc.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// stability constants, minimal degrees, thresholds and Peierls constants
    Constants,
    /// exhaustive excess-energy verification over small contours
    Verify,
    /// exact marginals by tree recursion, with concentration bounds
    Exact,
    /// heat-bath sampling checked against exact marginals
    Mc,
    /// truncated cluster expansion of log Z with remainder bounds
    Cluster,
    /// add site potentials, then verify against the reduced constant
    Perturb,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::Verify => "verify",
            Command::Exact => "exact",
            Command::Mc => "mc",
            Command::Cluster => "cluster",
            Command::Perturb => "perturb",
        }
    }
}

fn load(cli: &Cli) -> Result<Experiment, String> {
    let path = cli.config.as_ref().ok_or("--config is required")?;
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.resolve()
}

fn write_outputs(dir: &Path, report: &serde_json::Value, out: &Output) -> std::io::Result<()> {
    fs::create_dir_all(dir.join("tables"))?;
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(dir.join("report.json"), text)?;
    for (name, bytes) in &out.tables {
        fs::write(dir.join("tables").join(name), bytes)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let exp = match load(&cli) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let run = match cli.command {
        Command::Constants => commands::constants(&exp),
        Command::Verify => commands::verify(&exp),
        Command::Exact => commands::exact(&exp),
        Command::Mc => commands::mc(&exp),
        Command::Cluster => commands::cluster(&exp),
        Command::Perturb => commands::perturb(&exp),
    };
    let out = match run {
        Ok(o) => o,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
        Err(Failure::Budget(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_BUDGET);
        }
    };
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let status = if out.passed { "pass" } else { "violation" };
    let report = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": exp.config,
        "resolved": exp.resolved,
        "status": status,
        "warnings": out.warnings,
        "result": out.result,
    });
    let dir = &exp.config.output.dir;
    if let Err(e) = write_outputs(dir, &report, &out) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(EXIT_USAGE);
    }
    println!("{} {status}: {}", cli.command.name(), dir.join("report.json").display());
    if out.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VIOLATION)
    }
}
