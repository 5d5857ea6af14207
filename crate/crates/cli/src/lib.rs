//! Command-line front end: configuration, orchestration and CSV output.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand, ValueEnum};

use config::{ConfigError, RawConfig, RunConfig};
use output::Table;

#[derive(Debug, Parser)]
#[command(name = "fanova", version, about = "Sparse functional ANOVA component selection experiments")]
pub struct Cli {
    /// Configuration file (`key = value` lines).
    #[arg(long, global = true, env = "FANOVA_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Inactive subsets sampled per order in pool mode.
    #[arg(long, global = true)]
    pub pool_size: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Active component counts per order.
    Table1,
    /// Hamming risk across attenuation factors.
    Table2,
    /// Calibrated radii, thresholds and weight supports.
    Calibrate,
    /// Hamming risk of one configuration.
    Risk,
    /// Phase sweep over sparsity and radius.
    Boundary,
    /// Weight normalization and tail-bound audits.
    Audit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Table1 => "table1",
            Command::Table2 => "table2",
            Command::Calibrate => "calibrate",
            Command::Risk => "risk",
            Command::Boundary => "boundary",
            Command::Audit => "audit",
        }
    }
}

/// Resolves defaults, config file, environment and flags into one config.
pub fn resolve<I>(cli: &Cli, env: I) -> Result<RunConfig, ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut raw = RawConfig::with_defaults();
    if let Some(p) = &cli.config {
        raw.apply_file(p)?;
    }
    raw.apply_env(env)?;
    if let Some(s) = cli.seed {
        raw.set("seed", &s.to_string())?;
    }
    if let Some(o) = &cli.out {
        raw.set("out", &o.to_string_lossy())?;
    }
    if let Some(m) = cli.mode {
        raw.set("mode", if m == ModeArg::Full { "full" } else { "pool" })?;
    }
    if let Some(n) = cli.pool_size {
        raw.set("pool_size", &n.to_string())?;
    }
    if let Some(t) = cli.threads {
        raw.set("threads", &t.to_string())?;
    }
    RunConfig::from_raw(raw)
}

/// Computes the data table of one subcommand.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Table> {
    let job = || match cmd {
        Command::Table1 => commands::table1(cfg),
        Command::Table2 => commands::table2(cfg),
        Command::Calibrate => commands::calibrate(cfg),
        Command::Risk => commands::risk(cfg),
        Command::Boundary => commands::boundary(cfg),
        Command::Audit => commands::audit(cfg),
    };
    if cfg.threads == 0 {
        return job();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| anyhow!(ConfigError(format!("thread pool: {e}"))))?;
    pool.install(job)
}

pub fn manifest(cmd: Command, cfg: &RunConfig, wall_time: f64) -> String {
    format!(
        "{}manifest.version = {}\nmanifest.subcommand = {}\nmanifest.seed = {}\nmanifest.wall_time = {wall_time:.3}\n",
        cfg.echo(),
        env!("CARGO_PKG_VERSION"),
        cmd.name(),
        cfg.seed,
    )
}

/// 2 for configuration and I/O problems, 3 for numeric or capacity failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<fanova_core::Error>()) {
        3
    } else {
        2
    }
}

fn run_parsed<I>(cli: &Cli, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let env: Vec<(String, String)> = env.into_iter().collect();
    let quiet = cli.quiet
        || env
            .iter()
            .any(|(k, v)| k == "FANOVA_QUIET" && matches!(v.as_str(), "1" | "true"));
    let cfg = resolve(cli, env)?;
    let start = Instant::now();
    let table = execute(cli.command, &cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let (csv, _) = output::write_artifacts(&cfg.out, cli.command.name(), &table, &manifest(cli.command, &cfg, wall))?;
    if !quiet {
        eprintln!("wrote {} ({} rows, {wall:.2} s)", csv.display(), table.rows.len());
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn run_with_env<A, T, E>(args: A, env: E) -> i32
where
    A: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    E: IntoIterator<Item = (String, String)>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_parsed(&cli, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn run<A, T>(args: A) -> i32
where
    A: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_env(args, std::env::vars())
}
