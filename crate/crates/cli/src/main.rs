//! `epitrack`: batch driver for SIS tracking experiments.
//!
//! Every subcommand takes `--config PATH` (TOML), optional `--seed N` and
//! `--out DIR` overrides, and `--dry-run`. Results are computed in full
//! before anything is written; each artifact lands via temp file + rename.
//! Failures print one JSON line on stderr and exit with status 2 (config)
//! or 1 (runtime).

mod commands;
mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{Artifact, CommandError, Context};
use config::{ConfigError, ConfigFile};

#[derive(Parser)]
#[command(name = "epitrack", version, about = "SIS diffusion tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random graph.
    Generate(Common),
    /// Agent-based SIS simulation on a graph.
    Simulate(Common),
    /// Iterate the mean-field map.
    Meanfield(Common),
    /// Bayesian tracking against moving-average and VAR baselines.
    Track(Common),
    /// Fisher-information bound against filter MSE on two networks.
    Pcrlb(Common),
    /// Evolve a degree distribution, or run the two-time-scale tracker.
    Evolve(Common),
    /// Diffusion thresholds over a grid of attachment probabilities.
    Threshold(Common),
    /// Event log to mention graph, infection series and transmission rates.
    Ingest(Common),
    /// Discrete power-law fit of a graph's degrees.
    Fit(Common),
    /// Full event-log pipeline with KS comparison against the mean field.
    Report(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the config and stop.
    #[arg(long)]
    dry_run: bool,
}

type Runner = fn(&ConfigFile, &Context) -> commands::CmdResult;

impl Command {
    fn parts(&self) -> (&'static str, Runner, &Common) {
        match self {
            Command::Generate(c) => ("generate", commands::generate, c),
            Command::Simulate(c) => ("simulate", commands::simulate, c),
            Command::Meanfield(c) => ("meanfield", commands::meanfield, c),
            Command::Track(c) => ("track", commands::track, c),
            Command::Pcrlb(c) => ("pcrlb", commands::pcrlb, c),
            Command::Evolve(c) => ("evolve", commands::evolve, c),
            Command::Threshold(c) => ("threshold", commands::threshold, c),
            Command::Ingest(c) => ("ingest", commands::ingest, c),
            Command::Fit(c) => ("fit", commands::fit, c),
            Command::Report(c) => ("report", commands::report, c),
        }
    }
}

fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
    ConfigFile::parse(&text)
}

/// Writes every artifact to a temp file in `dir`, then renames them all.
fn write_atomically(dir: &Path, artifacts: &[Artifact]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut staged = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let mut tmp = tempfile::Builder::new()
            .prefix(&format!(".{}.", a.name))
            .tempfile_in(dir)
            .with_context(|| format!("staging {}", a.name))?;
        tmp.write_all(&a.bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, dir.join(&a.name)));
    }
    for (tmp, target) in staged {
        tmp.persist(&target)
            .map_err(|e| e.error)
            .with_context(|| format!("writing {}", target.display()))?;
    }
    Ok(())
}

fn fail(command: &str, err: &CommandError) -> ExitCode {
    let (line, code) = match err {
        CommandError::Config(e) => (
            json!({"status": "error", "kind": "config", "command": command, "field": e.field, "message": e.message}),
            2,
        ),
        CommandError::Runtime(e) => (
            json!({"status": "error", "kind": "runtime", "command": command, "message": format!("{e:#}")}),
            1,
        ),
    };
    eprintln!("{line}");
    ExitCode::from(code)
}

fn run(name: &'static str, runner: Runner, args: &Common) -> Result<serde_json::Value, CommandError> {
    let cfg = load(&args.config)?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let out = args.out.clone().or_else(|| cfg.out.as_ref().map(|o| base.join(o)));
    let ctx = Context {
        base,
        seed: args.seed.or(cfg.seed),
        dry_run: args.dry_run,
    };
    if !args.dry_run && out.is_none() {
        return Err(ConfigError::new("out", "no output directory: pass --out or set `out`").into());
    }
    match runner(&cfg, &ctx)? {
        None => Ok(json!({"status": "ok", "command": name, "dry_run": true})),
        Some(artifacts) => {
            let dir = out.expect("checked above");
            write_atomically(&dir, &artifacts)?;
            let names: Vec<&str> = artifacts.iter().map(|a| a.name.as_str()).collect();
            Ok(json!({"status": "ok", "command": name, "out": dir, "artifacts": names}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, runner, args) = cli.command.parts();
    match run(name, runner, args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(name, &e),
    }
}
