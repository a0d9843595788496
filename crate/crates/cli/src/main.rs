//! `alphaforge` command-line entry point: ingest, mine, eval, backtest, report.
//!
//! Every command prints a short summary on success. On failure it prints one
//! `error[<kind>]: <message>` line to stderr and exits with 2 (config),
//! 3 (data) or 4 (runtime).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "alphaforge", version, about = "Formulaic alpha mining and backtesting")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "ALPHAFORGE_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Read bars from a long-format CSV.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Read a panel cache written by `ingest`.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Use a generated planted-signal panel.
    #[arg(long, global = true)]
    synthetic: bool,
    /// Generator seed for the synthetic panel.
    #[arg(long, global = true)]
    data_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a CSV and write a checksummed binary panel cache.
    Ingest,
    /// Mine a pool of formulaic alphas.
    Mine(MineArgs),
    /// Evaluate one or more pools on a split.
    Eval(EvalArgs),
    /// Run the Top-K/Swap-N backtest on a pool's combined signal.
    Backtest(BacktestArgs),
    /// Rebuild return reports from a saved backtest.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct MineArgs {
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Keep the experience buffer across a stage-two restart.
    #[arg(long)]
    keep_buffer: bool,
    /// Start stage two from a fresh policy (`--fresh-policy false` keeps it).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    fresh_policy: Option<bool>,
    /// Formulas to seed pool and buffer with, one per line.
    #[arg(long)]
    seed_alphas: Option<PathBuf>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Stop once the training IC reaches this value.
    #[arg(long)]
    stop_at_ic: Option<f64>,
    /// Updates of a second stage re-seeded from the first stage's pool.
    #[arg(long)]
    stage_two_updates: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Pool files; several files are aggregated as mean and std.
    #[arg(long = "pool", required = true, num_args = 1..)]
    pools: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
    /// Also write the first pool's combined signal as a dates × tickers CSV.
    #[arg(long)]
    export_factor: bool,
}

#[derive(Debug, Args)]
struct BacktestArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    swap_n: Option<usize>,
    #[arg(long)]
    min_hold: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    start: Option<chrono::NaiveDate>,
    #[arg(long)]
    end: Option<chrono::NaiveDate>,
    #[arg(long)]
    capital: Option<f64>,
    #[arg(long)]
    fee_bps: Option<f64>,
    /// Two-column `date,level` CSV; defaults to an equal-weight index of the panel.
    #[arg(long)]
    benchmark: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Saved backtest; defaults to `<out>/backtest/backtest.json`.
    #[arg(long)]
    backtest: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let d = &cli.data;
    if d.csv.is_some() || d.cache.is_some() || d.synthetic {
        cfg.data.csv = d.csv.clone();
        cfg.data.cache = d.cache.clone();
        if d.synthetic {
            cfg.data.synthetic.get_or_insert_with(Default::default);
        } else {
            cfg.data.synthetic = None;
        }
    }
    if let (Some(seed), Some(syn)) = (d.data_seed, cfg.data.synthetic.as_mut()) {
        syn.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    match &cli.command {
        Command::Mine(m) => {
            let c = &mut cfg.mine;
            if let Some(v) = m.pool_size {
                c.pool_capacity = v;
            }
            if let Some(v) = m.rng_seed {
                c.rng_seed = v;
            }
            if m.keep_buffer {
                c.keep_buffer = true;
            }
            if let Some(v) = m.fresh_policy {
                c.fresh_policy = v;
            }
            if let Some(v) = m.updates {
                c.updates = v;
            }
            if let Some(v) = m.batch_size {
                c.batch_size = v;
            }
            if let Some(v) = m.max_len {
                c.max_len = v;
            }
            if m.stop_at_ic.is_some() {
                c.stop_at_ic = m.stop_at_ic;
            }
            if m.stage_two_updates.is_some() {
                c.stage_two_updates = m.stage_two_updates;
            }
            if m.seed_alphas.is_some() {
                cfg.seed_alphas = m.seed_alphas.clone();
            }
        }
        Command::Backtest(b) => {
            let p = &mut cfg.backtest;
            if let Some(v) = b.top_k {
                p.top_k = v;
            }
            if let Some(v) = b.swap_n {
                p.swap_n = v;
            }
            if let Some(v) = b.min_hold {
                p.min_hold_days = v;
            }
            if let Some(v) = b.threshold {
                p.enter_threshold = v;
            }
            if let Some(v) = b.start {
                p.start = v;
            }
            if let Some(v) = b.end {
                p.end = v;
            }
            if let Some(v) = b.capital {
                p.initial_capital = v;
            }
            if let Some(v) = b.fee_bps {
                p.fee_bps = v;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Mine(_) => commands::mine(&cfg),
        Command::Eval(a) => commands::eval(&cfg, &a.pools, a.split, a.export_factor),
        Command::Backtest(a) => commands::backtest(&cfg, &a.pool, a.benchmark.as_deref()),
        Command::Report(a) => commands::report(&cfg, a.backtest.as_deref(), a.benchmark.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
