//! Command implementations. Each writes only under the configured output
//! directory and returns a classified [`CliError`] on failure.

use std::path::{Path, PathBuf};

use alphaforge_core::backtest::{self, equal_weight_benchmark, read_benchmark_file, BacktestReport};
use alphaforge_core::dsl::{parse_formula_lines, AlphaExpr};
use alphaforge_core::metrics::{ic, rank_ic};
use alphaforge_core::ops::FactorMatrix;
use alphaforge_core::panel::{self, compute_targets, ingest_csv, FeaturePanel, PanelView, Split, TargetPanel};
use alphaforge_core::pool::{PoolError, PoolFile};
use alphaforge_core::search::{self, MiningData, SearchError};
use alphaforge_core::synth::planted_panel;
use serde::Serialize;

use crate::config::{Config, DEFAULT_HORIZON};
use crate::error::{io_error, CliError};
use crate::SplitName;

pub struct Loaded {
    pub panel: FeaturePanel,
    pub target: TargetPanel,
    pub split: Split,
}

fn checksum_path(cache: &Path) -> PathBuf {
    let mut s = cache.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

fn read_cache(path: &Path) -> Result<FeaturePanel, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let panel = FeaturePanel::from_bytes(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let sidecar = checksum_path(path);
    if let Ok(expected) = std::fs::read_to_string(&sidecar) {
        let actual = panel.checksum();
        if expected.trim() != actual {
            return Err(CliError::data(format!(
                "{}: checksum mismatch (expected {}, found {actual})",
                path.display(),
                expected.trim()
            )));
        }
    }
    Ok(panel)
}

pub fn load_data(cfg: &Config) -> Result<Loaded, CliError> {
    cfg.validate()?;
    let d = &cfg.data;
    let data_err = |e: panel::PanelError| CliError::data(e.to_string());
    let (panel, target, default_split) = if let Some(syn) = &d.synthetic {
        let p = planted_panel(syn);
        (p.panel, p.target, Some(p.split))
    } else {
        let panel = match (&d.csv, &d.cache) {
            (Some(csv), _) => ingest_csv(csv, &d.columns).map_err(data_err)?,
            (_, Some(cache)) => read_cache(cache)?,
            _ => unreachable!("validated"),
        };
        let target = compute_targets(&panel, d.horizon.unwrap_or(DEFAULT_HORIZON)).map_err(data_err)?;
        (panel, target, None)
    };
    let split = match (&cfg.split, default_split) {
        (Some(s), _) => panel::split(&panel, &s.train, &s.valid, &s.test).map_err(data_err)?,
        (None, Some(s)) => s,
        (None, None) => return Err(CliError::config("split ranges are required for file data")),
    };
    Ok(Loaded { panel, target, split })
}

fn out_path(cfg: &Config, rel: &str) -> Result<PathBuf, CliError> {
    let path = cfg.output_dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_error("cannot create", parent, e))?;
    }
    Ok(path)
}

fn write(cfg: &Config, rel: &str, contents: &str) -> Result<PathBuf, CliError> {
    let path = out_path(cfg, rel)?;
    std::fs::write(&path, contents).map_err(|e| io_error("cannot write", &path, e))?;
    Ok(path)
}

pub fn ingest(cfg: &Config) -> Result<(), CliError> {
    let Some(csv) = &cfg.data.csv else {
        return Err(CliError::config("ingest needs a CSV source (--csv or data.csv)"));
    };
    if !csv.is_file() {
        return Err(CliError::config(format!("file not found: {}", csv.display())));
    }
    let panel = ingest_csv(csv, &cfg.data.columns).map_err(|e| CliError::data(e.to_string()))?;
    let bytes = panel.to_bytes();
    let checksum = panel.checksum();
    let path = out_path(cfg, "panel.bin")?;
    std::fs::write(&path, &bytes).map_err(|e| io_error("cannot write", &path, e))?;
    let sidecar = checksum_path(&path);
    std::fs::write(&sidecar, format!("{checksum}\n")).map_err(|e| io_error("cannot write", &sidecar, e))?;
    let dates = panel.dates();
    println!(
        "stocks={} days={} start={} end={} checksum={checksum} cache={}",
        panel.n_stocks(),
        panel.n_days(),
        dates[0],
        dates[dates.len() - 1],
        path.display()
    );
    Ok(())
}

fn read_seeds(path: &Path) -> Result<Vec<AlphaExpr>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse_formula_lines(&text).map_err(|(line, e)| CliError::config(format!("{} line {line}: {e}", path.display())))
}

pub fn mine(cfg: &Config) -> Result<(), CliError> {
    let seeds = match &cfg.seed_alphas {
        Some(p) => read_seeds(p)?,
        None => Vec::new(),
    };
    let data = load_data(cfg)?;
    let mining = MiningData {
        panel: &data.panel,
        target: &data.target,
        split: data.split.clone(),
    };
    let outcome = search::mine(cfg.mine, &mining, &seeds).map_err(|e| match e {
        SearchError::Config(m) => CliError::config(m),
        other => CliError::runtime(other.to_string()),
    })?;
    let pool_path = write(cfg, "pool.json", &outcome.pool.to_file().to_json())?;
    let mut log = String::new();
    for rec in &outcome.log {
        log.push_str(&rec.to_json_line());
        log.push('\n');
    }
    let log_path = write(cfg, "mine_log.jsonl", &log)?;
    let last_valid = outcome.log.iter().rev().find_map(|r| r.valid_ic);
    println!(
        "pool_size={} train_ic={:.6} valid_ic={} updates={} pool={} log={}",
        outcome.pool.len(),
        outcome.pool.train_ic(),
        last_valid.map_or("nan".to_string(), |v| format!("{v:.6}")),
        outcome.log.len(),
        pool_path.display(),
        log_path.display()
    );
    Ok(())
}

fn read_pool(path: &Path) -> Result<PoolFile, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read pool {}: {e}", path.display())))?;
    PoolFile::from_json(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn combine(pool: &PoolFile, view: &PanelView<'_>, path: &Path) -> Result<FactorMatrix, CliError> {
    pool.combine(view).map_err(|e| match e {
        PoolError::Empty => CliError::data(format!("{}: pool is empty", path.display())),
        other => CliError::data(format!("{}: {other}", path.display())),
    })
}

#[derive(Debug, Serialize)]
struct PoolEval {
    pool: String,
    ic: f64,
    rank_ic: f64,
    days_used: usize,
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    split: String,
    pools: Vec<PoolEval>,
    ic_mean: f64,
    ic_std: f64,
    rank_ic_mean: f64,
    rank_ic_std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn eval(cfg: &Config, pools: &[PathBuf], split: SplitName, export: bool) -> Result<(), CliError> {
    let files: Vec<PoolFile> = pools.iter().map(|p| read_pool(p)).collect::<Result<_, _>>()?;
    let data = load_data(cfg)?;
    let (name, days) = match split {
        SplitName::Train => ("train", data.split.train.clone()),
        SplitName::Valid => ("valid", data.split.valid.clone()),
        SplitName::Test => ("test", data.split.test.clone()),
    };
    if days.is_empty() {
        return Err(CliError::data(format!("{name} split has no days")));
    }
    let view = PanelView::new(&data.panel, days.clone());
    let target = data.target.slice_days(days);
    let mut rows = Vec::with_capacity(files.len());
    for (k, (file, path)) in files.iter().zip(pools).enumerate() {
        let z = combine(file, &view, path)?;
        if export && k == 0 {
            write(cfg, &format!("factor_{name}.csv"), &z.to_csv(view.dates(), data.panel.tickers()))?;
        }
        let report = ic(&z, &target).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let ric = rank_ic(&z, &target).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        rows.push(PoolEval {
            pool: path.display().to_string(),
            ic: report.ic,
            rank_ic: ric,
            days_used: report.days_used,
        });
    }
    let (ic_mean, ic_std) = mean_std(&rows.iter().map(|r| r.ic).collect::<Vec<_>>());
    let (rank_ic_mean, rank_ic_std) = mean_std(&rows.iter().map(|r| r.rank_ic).collect::<Vec<_>>());
    let out = EvalOutput {
        split: name.to_string(),
        pools: rows,
        ic_mean,
        ic_std,
        rank_ic_mean,
        rank_ic_std,
    };
    write(cfg, &format!("eval_{name}.json"), &serde_json::to_string_pretty(&out).expect("serializes"))?;
    for r in &out.pools {
        println!("pool={} ic={:.6} rank_ic={:.6} days={}", r.pool, r.ic, r.rank_ic, r.days_used);
    }
    println!("IC {ic_mean:.4} ({ic_std:.4}) RankIC {rank_ic_mean:.4} ({rank_ic_std:.4}) n={}", out.pools.len());
    Ok(())
}

fn load_benchmark(path: Option<&Path>, panel: Option<&FeaturePanel>) -> Result<Vec<(chrono::NaiveDate, f64)>, CliError> {
    match (path, panel) {
        (Some(p), _) => {
            if !p.is_file() {
                return Err(CliError::config(format!("benchmark file not found: {}", p.display())));
            }
            read_benchmark_file(p).map_err(|e| CliError::data(e.to_string()))
        }
        (None, Some(panel)) => Ok(equal_weight_benchmark(panel)),
        (None, None) => Err(CliError::config("a benchmark is required")),
    }
}

fn write_report(cfg: &Config, dir: &str, bt: &BacktestReport, bench: &[(chrono::NaiveDate, f64)]) -> Result<(), CliError> {
    let out = backtest::report(bt, bench).map_err(|e| CliError::data(e.to_string()))?;
    write(cfg, &format!("{dir}/returns.csv"), &out.to_csv())?;
    write(cfg, &format!("{dir}/summary.json"), &out.summary_json())?;
    let s = &out.summary;
    println!(
        "days={} trades={} total_return={:.6} benchmark_return={:.6} max_drawdown={:.6} daily_mean={:.6} daily_std={:.6}",
        s.days, s.trades, s.total_return, s.benchmark_total_return, s.max_drawdown, s.daily_mean, s.daily_std
    );
    Ok(())
}

pub fn backtest(cfg: &Config, pool: &Path, benchmark: Option<&Path>) -> Result<(), CliError> {
    let file = read_pool(pool)?;
    if let Some(b) = benchmark {
        if !b.is_file() {
            return Err(CliError::config(format!("benchmark file not found: {}", b.display())));
        }
    }
    let data = load_data(cfg)?;
    let signal = combine(&file, &PanelView::full(&data.panel), pool)?;
    let bt = backtest::run_backtest(&signal, &data.panel, &cfg.backtest).map_err(|e| match e {
        backtest::BacktestError::Params(m) => CliError::config(m),
        other => CliError::data(other.to_string()),
    })?;
    write(cfg, "backtest/backtest.json", &serde_json::to_string(&bt).expect("serializes"))?;
    write(cfg, "backtest/trades.csv", &bt.trades_csv())?;
    let bench = load_benchmark(benchmark, Some(&data.panel))?;
    write_report(cfg, "backtest", &bt, &bench)
}

pub fn report(cfg: &Config, saved: Option<&Path>, benchmark: Option<&Path>) -> Result<(), CliError> {
    let path = saved.map_or_else(|| cfg.output_dir.join("backtest/backtest.json"), Path::to_path_buf);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::config(format!("cannot read backtest {}: {e}", path.display())))?;
    let bt: BacktestReport =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let bench = match benchmark {
        Some(_) => load_benchmark(benchmark, None)?,
        None => load_benchmark(None, Some(&load_data(cfg)?.panel))?,
    };
    write_report(cfg, "report", &bt, &bench)
}
