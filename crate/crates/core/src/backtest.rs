//! Long-only Top-K / Swap-N backtest at daily closes.
//!
//! Each day the valid stocks are ranked by signal (descending, ties by
//! ticker). Then up to N holdings are sold, worst-ranked first, among those
//! held at least H days that have left the top K or whose signal is below the
//! entry threshold. After that, up to N unheld top-K stocks with signal above
//! the threshold are bought, each sized at `equity / K` (capped by cash).
//! Untradable (masked) stocks keep their last valid close and cannot trade.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::Feature;
use crate::ops::FactorMatrix;
use crate::panel::FeaturePanel;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest parameters: {0}")]
    Params(String),
    #[error("signal shape {signal:?} does not match panel {panel:?}")]
    Shape {
        signal: (usize, usize),
        panel: (usize, usize),
    },
    #[error("no trading days between {0} and {1}")]
    NoDays(NaiveDate, NaiveDate),
    #[error("benchmark is missing dates: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "))]
    MissingBenchmark(Vec<NaiveDate>),
    #[error("benchmark file: {0}")]
    Benchmark(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestParams {
    pub top_k: usize,
    pub swap_n: usize,
    /// Minimum trading days a position is held before it may be sold.
    pub min_hold_days: usize,
    pub enter_threshold: f64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub initial_capital: f64,
    /// Proportional cost per trade in basis points.
    pub fee_bps: f64,
}

impl Default for BacktestParams {
    fn default() -> Self {
        BacktestParams {
            top_k: 50,
            swap_n: 5,
            min_hold_days: 20,
            enter_threshold: 0.0,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2021, 12, 31).expect("valid date"),
            initial_capital: 1_000_000.0,
            fee_bps: 0.0,
        }
    }
}

impl BacktestParams {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.top_k == 0 {
            return Err(BacktestError::Params("top_k must be at least 1".into()));
        }
        if self.swap_n > self.top_k {
            return Err(BacktestError::Params(format!(
                "swap_n {} exceeds top_k {}",
                self.swap_n, self.top_k
            )));
        }
        if !(self.initial_capital > 0.0) || !self.initial_capital.is_finite() {
            return Err(BacktestError::Params("initial capital must be positive".into()));
        }
        if !(self.fee_bps >= 0.0) {
            return Err(BacktestError::Params("fee_bps must be non-negative".into()));
        }
        if self.enter_threshold.is_nan() {
            return Err(BacktestError::Params("enter_threshold must not be NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub date: NaiveDate,
    pub ticker: String,
    pub side: Side,
    pub shares: f64,
    pub price: f64,
    /// Cash moved, fees included.
    pub cash: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub entry_date: NaiveDate,
    pub shares: f64,
    entry_day: usize,
}

/// Holdings keyed by stock index, cash, and the equity curve so far.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PortfolioState {
    pub holdings: BTreeMap<usize, Position>,
    pub cash: f64,
    pub equity_curve: Vec<f64>,
}

/// End-of-day accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub cash: f64,
    pub holdings_value: f64,
    pub equity: f64,
    pub bought: f64,
    pub sold: f64,
    pub positions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub params: BacktestParams,
    pub days: Vec<DayRecord>,
    pub trades: Vec<Trade>,
}

impl BacktestReport {
    pub fn dates(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).collect()
    }

    pub fn equity(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.equity).collect()
    }

    /// Trade ledger as CSV with a header row.
    pub fn trades_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &self.trades {
            w.serialize(t).expect("trade serializes");
        }
        if self.trades.is_empty() {
            return "date,ticker,side,shares,price,cash\n".into();
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }

    /// Cumulative return per day relative to the initial capital.
    pub fn cumulative_returns(&self) -> Vec<f64> {
        self.days
            .iter()
            .map(|d| d.equity / self.params.initial_capital - 1.0)
            .collect()
    }
}

/// Runs the simulation over the panel days inside `params.start..=params.end`.
pub fn run_backtest(
    signal: &FactorMatrix,
    panel: &FeaturePanel,
    params: &BacktestParams,
) -> Result<BacktestReport, BacktestError> {
    params.validate()?;
    if signal.shape() != panel.shape() {
        return Err(BacktestError::Shape {
            signal: signal.shape(),
            panel: panel.shape(),
        });
    }
    let dates = panel.dates();
    let range = dates.partition_point(|d| *d < params.start)..dates.partition_point(|d| *d <= params.end);
    if range.is_empty() {
        return Err(BacktestError::NoDays(params.start, params.end));
    }
    let close = panel.feature(Feature::Close);
    let mask = panel.mask();
    let tickers = panel.tickers();
    let n = panel.n_stocks();
    let fee = params.fee_bps / 10_000.0;

    // last valid close per stock, seeded from history before the range
    let mut last_price: Vec<f64> = vec![f64::NAN; n];
    for d in 0..range.start {
        for i in 0..n {
            if mask[(i, d)] && close[(i, d)] > 0.0 {
                last_price[i] = close[(i, d)];
            }
        }
    }
    let mut state = PortfolioState {
        cash: params.initial_capital,
        ..PortfolioState::default()
    };
    let mut days = Vec::with_capacity(range.len());
    let mut trades = Vec::new();

    for d in range {
        let date = dates[d];
        let tradable: Vec<bool> = (0..n).map(|i| mask[(i, d)] && close[(i, d)] > 0.0).collect();
        for i in 0..n {
            if tradable[i] {
                last_price[i] = close[(i, d)];
            }
        }
        let value_of = |state: &PortfolioState| -> f64 {
            state
                .holdings
                .iter()
                .map(|(i, p)| p.shares * last_price[*i])
                .sum::<f64>()
        };

        let mut ranked: Vec<usize> = (0..n).filter(|&i| signal.get(i, d).is_finite()).collect();
        // partial_cmp so that 0.0 and -0.0 tie and fall through to the ticker
        ranked.sort_by(|&a, &b| {
            signal
                .get(b, d)
                .partial_cmp(&signal.get(a, d))
                .expect("finite signals")
                .then_with(|| tickers[a].cmp(&tickers[b]))
        });
        let (mut bought, mut sold) = (0.0, 0.0);
        if !ranked.is_empty() {
            let mut position = vec![usize::MAX; n];
            for (r, &i) in ranked.iter().enumerate() {
                position[i] = r;
            }
            let in_top = |i: usize| position[i] < params.top_k;

            // sells: eligible holdings, worst first; NaN signals rank last, by ticker
            let mut exits: Vec<usize> = state
                .holdings
                .iter()
                .filter(|(i, p)| {
                    let s = signal.get(**i, d);
                    d - p.entry_day >= params.min_hold_days
                        && (!in_top(**i) || !s.is_finite() || s < params.enter_threshold)
                })
                .map(|(i, _)| *i)
                .collect();
            exits.sort_by(|&a, &b| {
                position[b]
                    .cmp(&position[a])
                    .then_with(|| tickers[a].cmp(&tickers[b]))
            });
            let mut sells = 0;
            for i in exits {
                if sells == params.swap_n {
                    break;
                }
                if !tradable[i] {
                    continue;
                }
                let pos = state.holdings.remove(&i).expect("held");
                let price = close[(i, d)];
                let proceeds = pos.shares * price * (1.0 - fee);
                state.cash += proceeds;
                sold += proceeds;
                sells += 1;
                trades.push(Trade {
                    date,
                    ticker: tickers[i].clone(),
                    side: Side::Sell,
                    shares: pos.shares,
                    price,
                    cash: proceeds,
                });
            }

            // buys: best-ranked unheld top-K names above the threshold
            let mut buys = 0;
            for &i in ranked.iter().take(params.top_k) {
                if buys == params.swap_n || state.holdings.len() >= params.top_k {
                    break;
                }
                if state.holdings.contains_key(&i) || !tradable[i] || !(signal.get(i, d) > params.enter_threshold) {
                    continue;
                }
                let equity = state.cash + value_of(&state);
                let spend = (equity / params.top_k as f64).min(state.cash);
                if !(spend > 0.0) {
                    break;
                }
                let price = close[(i, d)];
                let shares = spend / (price * (1.0 + fee));
                state.cash -= spend;
                bought += spend;
                buys += 1;
                state.holdings.insert(
                    i,
                    Position {
                        entry_date: date,
                        shares,
                        entry_day: d,
                    },
                );
                trades.push(Trade {
                    date,
                    ticker: tickers[i].clone(),
                    side: Side::Buy,
                    shares,
                    price,
                    cash: spend,
                });
            }
        }
        let holdings_value = value_of(&state);
        let equity = state.cash + holdings_value;
        state.equity_curve.push(equity);
        days.push(DayRecord {
            date,
            cash: state.cash,
            holdings_value,
            equity,
            bought,
            sold,
            positions: state.holdings.len(),
        });
    }
    Ok(BacktestReport {
        params: *params,
        days,
        trades,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub date: NaiveDate,
    pub strategy: f64,
    pub benchmark: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub total_return: f64,
    /// Largest peak-to-trough loss as a positive fraction.
    pub max_drawdown: f64,
    pub daily_mean: f64,
    pub daily_std: f64,
    pub benchmark_total_return: f64,
    pub days: usize,
    pub trades: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub rows: Vec<ReportRow>,
    pub summary: ReportSummary,
}

impl ReportOutput {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("date,strategy,benchmark,excess\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.date, r.strategy, r.benchmark, r.excess).expect("string write");
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    /// Writes `returns.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("returns.csv"), self.to_csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json())
    }
}

/// Summary statistics of an equity curve started from `initial`.
pub fn summarize(equity: &[f64], initial: f64) -> (f64, f64, f64, f64) {
    let mut prev = initial;
    let mut rets = Vec::with_capacity(equity.len());
    let (mut peak, mut mdd) = (initial, 0.0f64);
    for &e in equity {
        rets.push(e / prev - 1.0);
        prev = e;
        peak = peak.max(e);
        mdd = mdd.max(1.0 - e / peak);
    }
    let total = equity.last().map_or(0.0, |e| e / initial - 1.0);
    let n = rets.len().max(1) as f64;
    let mean = rets.iter().sum::<f64>() / n;
    let std = (rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    (total, mdd, mean, std)
}

/// Cumulative strategy vs benchmark returns and a summary. The benchmark must
/// cover every backtest date.
pub fn report(report: &BacktestReport, benchmark: &[(NaiveDate, f64)]) -> Result<ReportOutput, BacktestError> {
    let levels: BTreeMap<NaiveDate, f64> = benchmark.iter().copied().collect();
    let missing: Vec<NaiveDate> = report
        .days
        .iter()
        .map(|d| d.date)
        .filter(|d| !levels.contains_key(d))
        .collect();
    if !missing.is_empty() {
        return Err(BacktestError::MissingBenchmark(missing));
    }
    let base = report.days.first().map_or(1.0, |d| levels[&d.date]);
    let strategy = report.cumulative_returns();
    let rows: Vec<ReportRow> = report
        .days
        .iter()
        .zip(&strategy)
        .map(|(d, s)| {
            let b = levels[&d.date] / base - 1.0;
            ReportRow {
                date: d.date,
                strategy: *s,
                benchmark: b,
                excess: s - b,
            }
        })
        .collect();
    let (total_return, max_drawdown, daily_mean, daily_std) = summarize(&report.equity(), report.params.initial_capital);
    Ok(ReportOutput {
        summary: ReportSummary {
            total_return,
            max_drawdown,
            daily_mean,
            daily_std,
            benchmark_total_return: rows.last().map_or(0.0, |r| r.benchmark),
            days: rows.len(),
            trades: report.trades.len(),
        },
        rows,
    })
}

/// Equal-weight index of the panel's valid closes, usable as a default benchmark.
pub fn equal_weight_benchmark(panel: &FeaturePanel) -> Vec<(NaiveDate, f64)> {
    let close = panel.feature(Feature::Close);
    let mask = panel.mask();
    let mut level = 1.0;
    let mut out = Vec::with_capacity(panel.n_days());
    for d in 0..panel.n_days() {
        if d > 0 {
            let rets: Vec<f64> = (0..panel.n_stocks())
                .filter(|&i| mask[(i, d)] && mask[(i, d - 1)])
                .map(|i| close[(i, d)] / close[(i, d - 1)] - 1.0)
                .filter(|r| r.is_finite())
                .collect();
            if !rets.is_empty() {
                level *= 1.0 + rets.iter().sum::<f64>() / rets.len() as f64;
            }
        }
        out.push((panel.dates()[d], level));
    }
    out
}

/// Reads a two-column `date,level` CSV with a header row.
pub fn read_benchmark<R: Read>(reader: R) -> Result<Vec<(NaiveDate, f64)>, BacktestError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| BacktestError::Benchmark(e.to_string()))?;
        let line = k + 2;
        let field = |j: usize| rec.get(j).map(str::trim).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
            .map_err(|e| BacktestError::Benchmark(format!("line {line}: bad date {:?}: {e}", field(0))))?;
        let level: f64 = field(1)
            .parse()
            .map_err(|_| BacktestError::Benchmark(format!("line {line}: bad level {:?}", field(1))))?;
        out.push((date, level));
    }
    Ok(out)
}

pub fn read_benchmark_file(path: &Path) -> Result<Vec<(NaiveDate, f64)>, BacktestError> {
    let file = std::fs::File::open(path).map_err(|e| BacktestError::Benchmark(format!("{}: {e}", path.display())))?;
    read_benchmark(file)
}
