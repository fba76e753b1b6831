//! `ldpnet` experiment driver.

mod config;
mod failure;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldpnet::acceptance::{self, AcceptanceConfig, CRITERIA};

use config::Stage;
use failure::Failure;

/// Output directory override, below `--out` and above the config file.
const OUT_ENV: &str = "LDPNET_OUT";

#[derive(Debug, Parser)]
#[command(name = "ldpnet", version, about = "Sparse random graph dynamics and large-deviation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment (or, for verify, acceptance) configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Replaces the master seed of the configuration.
    #[arg(long, global = true, value_name = "SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs the configured pipeline.
    Run,
    /// Samples the graph and writes it with its degree profile.
    SampleGraph,
    /// Samples the graph and integrates the dynamics on it.
    Simulate,
    /// Tabulates node rates.
    Rates,
    /// Scans normalized event log-probabilities along the n grid.
    LdpScan,
    /// Checks the push-forward limit and the tree factorization.
    PushforwardCheck,
    /// Runs the built-in acceptance suite.
    Verify {
        /// Prints the criterion ids and names without running them.
        #[arg(long)]
        list: bool,
        /// Runs only the given criteria (repeatable).
        #[arg(long, value_name = "ID")]
        only: Vec<u8>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(k) = cli.common.threads {
        if k == 0 {
            return Err(Failure::Config("--threads: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Other(format!("thread pool: {e}")))?;
    }
    let (name, stages): (&str, Option<&[Stage]>) = match &cli.command {
        Command::Verify { list, only } => return verify(&cli.common, *list, only),
        Command::Run => ("run", None),
        Command::SampleGraph => ("sample-graph", Some(&[Stage::Sample])),
        Command::Simulate => ("simulate", Some(&[Stage::Sample, Stage::Simulate])),
        Command::Rates => ("rates", Some(&[Stage::Rates])),
        Command::LdpScan => ("ldp-scan", Some(&[Stage::LdpScan])),
        Command::PushforwardCheck => ("pushforward-check", Some(&[Stage::Pushforward])),
    };
    run(&cli.common, name, stages)
}

fn output_dir(flag: Option<&Path>, configured: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.to_path_buf(),
    }
}

fn run(common: &Common, name: &str, stages: Option<&[Stage]>) -> Result<(), Failure> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config: required".into()))?;
    let mut cfg = config::load(path)?;
    if let Some(seed) = common.seed {
        cfg.graph.seed = seed;
    }
    let out = output_dir(common.out.as_deref(), &cfg.outputs.dir);
    let plan = cfg.plan(stages)?;
    let manifest = pipeline::execute(&plan, &out, name)?;
    for s in &manifest.stages {
        println!("stage {:<12} {:.3} s", s.stage, s.wall_s);
    }
    for o in &manifest.outputs {
        println!("wrote {}", out.join(&o.file).display());
    }
    println!("wrote {}", out.join(pipeline::MANIFEST_FILE).display());
    Ok(())
}

fn verify(common: &Common, list: bool, only: &[u8]) -> Result<(), Failure> {
    if list {
        for c in CRITERIA {
            println!("{:>2} {:<22} budget {} s", c.id, c.name, c.budget_s);
        }
        return Ok(());
    }
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            config::parse_json::<AcceptanceConfig>(&text)?
        }
        None => AcceptanceConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if cfg.grid_bins == 0 {
        return Err(Failure::Config("grid_bins: must be >= 1".into()));
    }
    if let Some(bad) = only.iter().find(|id| acceptance::criterion(**id).is_none()) {
        return Err(Failure::Config(format!("--only: no criterion {bad}")));
    }
    let ids: Vec<u8> = if only.is_empty() {
        CRITERIA.iter().map(|c| c.id).collect()
    } else {
        only.to_vec()
    };
    let mut failed = Vec::new();
    for id in ids {
        let outcome = acceptance::run_criterion(id, &cfg).expect("known id");
        println!("{outcome}");
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Contract(format!("criteria failed: {failed:?}")))
    }
}
