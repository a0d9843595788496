//! Stock × day × feature panels, forward-return targets and date splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsl::Feature;

#[derive(Debug, thiserror::Error)]
pub enum PanelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("line {line}: duplicate row for ticker {ticker} on {date}")]
    DuplicateRow {
        line: u64,
        ticker: String,
        date: NaiveDate,
    },
    #[error("input contains no data rows")]
    Empty,
    #[error("invalid panel: {0}")]
    Invalid(String),
    #[error("horizon {horizon} must be in 1..{days}")]
    Horizon { horizon: usize, days: usize },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("corrupt panel cache: {0}")]
    Cache(String),
}

/// Column names used to read the CSV; defaults to the canonical names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub ticker: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    pub vwap: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            date: "date".into(),
            ticker: "ticker".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            vwap: "vwap".into(),
        }
    }
}

impl ColumnMap {
    fn feature_column(&self, f: Feature) -> &str {
        match f {
            Feature::Open => &self.open,
            Feature::Close => &self.close,
            Feature::High => &self.high,
            Feature::Low => &self.low,
            Feature::Volume => &self.volume,
            Feature::Vwap => &self.vwap,
        }
    }
}

/// Aligned daily bars. `values[f]` is a (stock, day) matrix for feature `f`
/// in [`Feature::ALL`] order; cells with `mask == false` hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    values: Vec<Array2<f64>>,
    mask: Array2<bool>,
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
}

impl FeaturePanel {
    /// Builds a panel, checking shapes and invariants. Masked cells are forced to NaN.
    pub fn new(
        mut values: Vec<Array2<f64>>,
        mask: Array2<bool>,
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
    ) -> Result<Self, PanelError> {
        let shape = (tickers.len(), dates.len());
        if values.len() != Feature::ALL.len() {
            return Err(PanelError::Invalid(format!(
                "expected {} features, got {}",
                Feature::ALL.len(),
                values.len()
            )));
        }
        if mask.dim() != shape || values.iter().any(|v| v.dim() != shape) {
            return Err(PanelError::Invalid("shape mismatch".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PanelError::Invalid("dates must be strictly increasing".into()));
        }
        let unique: BTreeSet<&String> = tickers.iter().collect();
        if unique.len() != tickers.len() {
            return Err(PanelError::Invalid("duplicate tickers".into()));
        }
        for (f, v) in Feature::ALL.iter().zip(values.iter_mut()) {
            for ((i, d), x) in v.indexed_iter_mut() {
                if !mask[(i, d)] {
                    *x = f64::NAN;
                } else if !x.is_finite() || (*f == Feature::Volume && *x < 0.0) {
                    return Err(PanelError::Invalid(format!(
                        "{} of {} on {} is {x}",
                        f.name(),
                        tickers[i],
                        dates[d]
                    )));
                }
            }
        }
        Ok(FeaturePanel {
            values,
            mask,
            dates,
            tickers,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_stocks(), self.n_days())
    }

    pub fn feature(&self, f: Feature) -> &Array2<f64> {
        &self.values[f.index()]
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        Feature::ALL.iter().map(|f| f.name()).collect()
    }

    /// Day index for a date, if present.
    pub fn day_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Copy restricted to days `range` (all stocks kept).
    pub fn slice_days(&self, range: Range<usize>) -> FeaturePanel {
        FeaturePanel {
            values: self
                .values
                .iter()
                .map(|v| v.slice(s![.., range.clone()]).to_owned())
                .collect(),
            mask: self.mask.slice(s![.., range.clone()]).to_owned(),
            dates: self.dates[range].to_vec(),
            tickers: self.tickers.clone(),
        }
    }

    /// Deterministic binary encoding, used for the ingest cache.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, t) = self.shape();
        let mut out = Vec::with_capacity(16 + n * t * (8 * 6 + 1));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(t as u64).to_le_bytes());
        for d in &self.dates {
            let s = d.format("%Y-%m-%d").to_string();
            out.extend_from_slice(s.as_bytes());
        }
        for tk in &self.tickers {
            out.extend_from_slice(&(tk.len() as u64).to_le_bytes());
            out.extend_from_slice(tk.as_bytes());
        }
        for m in self.mask.iter() {
            out.push(*m as u8);
        }
        for v in &self.values {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PanelError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(CACHE_MAGIC.len())? != CACHE_MAGIC {
            return Err(PanelError::Cache("bad magic".into()));
        }
        let n = r.u64()? as usize;
        let t = r.u64()? as usize;
        let mut dates = Vec::with_capacity(t);
        for _ in 0..t {
            let s = std::str::from_utf8(r.take(10)?).map_err(|e| PanelError::Cache(e.to_string()))?;
            dates.push(
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|e| PanelError::Cache(e.to_string()))?,
            );
        }
        let mut tickers = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u64()? as usize;
            let s = std::str::from_utf8(r.take(len)?).map_err(|e| PanelError::Cache(e.to_string()))?;
            tickers.push(s.to_string());
        }
        let mask_bytes = r.take(n * t)?;
        let mask = Array2::from_shape_vec((n, t), mask_bytes.iter().map(|b| *b != 0).collect())
            .map_err(|e| PanelError::Cache(e.to_string()))?;
        let mut values = Vec::with_capacity(6);
        for _ in 0..Feature::ALL.len() {
            let mut v = Vec::with_capacity(n * t);
            for _ in 0..n * t {
                v.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            values.push(Array2::from_shape_vec((n, t), v).map_err(|e| PanelError::Cache(e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(PanelError::Cache("trailing bytes".into()));
        }
        FeaturePanel::new(values, mask, dates, tickers)
    }

    /// Hex SHA-256 of [`FeaturePanel::to_bytes`].
    pub fn checksum(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

const CACHE_MAGIC: &[u8] = b"AFPANEL1";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PanelError> {
        if self.pos + n > self.bytes.len() {
            return Err(PanelError::Cache("truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, PanelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a CSV file of daily bars.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnMap) -> Result<FeaturePanel, PanelError> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

/// Reads CSV bars from any reader. Dates are the sorted union of observed
/// dates, tickers are sorted, and cells without a row are masked.
pub fn ingest_reader<R: Read>(reader: R, schema: &ColumnMap) -> Result<FeaturePanel, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(PanelError::Csv(e.to_string())),
    };
    if headers.is_empty() {
        return Err(PanelError::Empty);
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let date_col = find(&schema.date)?;
    let ticker_col = find(&schema.ticker)?;
    let feature_cols = Feature::ALL
        .iter()
        .map(|f| find(schema.feature_column(*f)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows: BTreeMap<(String, NaiveDate), [f64; 6]> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            PanelError::MalformedRow {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |col: usize| record.get(col).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(date_col), "%Y-%m-%d").map_err(|_| {
            PanelError::MalformedRow {
                line,
                message: format!("bad date {:?}", field(date_col)),
            }
        })?;
        let ticker = field(ticker_col).to_string();
        if ticker.is_empty() {
            return Err(PanelError::MalformedRow {
                line,
                message: "empty ticker".into(),
            });
        }
        let mut vals = [0.0; 6];
        for (k, (&col, f)) in feature_cols.iter().zip(Feature::ALL).enumerate() {
            let raw = field(col);
            let v: f64 = raw.parse().map_err(|_| PanelError::MalformedRow {
                line,
                message: format!("{} is not a number: {raw:?}", f.name()),
            })?;
            if !v.is_finite() || (f == Feature::Volume && v < 0.0) {
                return Err(PanelError::MalformedRow {
                    line,
                    message: format!("{} out of range: {raw:?}", f.name()),
                });
            }
            vals[k] = v;
        }
        if rows.insert((ticker.clone(), date), vals).is_some() {
            return Err(PanelError::DuplicateRow { line, ticker, date });
        }
    }
    if rows.is_empty() {
        return Err(PanelError::Empty);
    }

    let dates: Vec<NaiveDate> = rows
        .keys()
        .map(|(_, d)| *d)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let tickers: Vec<String> = rows
        .keys()
        .map(|(t, _)| t.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let day_index: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let stock_index: HashMap<&str, usize> =
        tickers.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let shape = (tickers.len(), dates.len());
    let mut values = vec![Array2::from_elem(shape, f64::NAN); 6];
    let mut mask = Array2::from_elem(shape, false);
    for ((ticker, date), vals) in &rows {
        let i = stock_index[ticker.as_str()];
        let d = day_index[date];
        mask[(i, d)] = true;
        for (k, v) in vals.iter().enumerate() {
            values[k][(i, d)] = *v;
        }
    }
    FeaturePanel::new(values, mask, dates, tickers)
}

/// Forward returns over `horizon` days, NaN where either end is masked.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPanel {
    pub returns: Array2<f64>,
    pub horizon: usize,
}

impl TargetPanel {
    pub fn shape(&self) -> (usize, usize) {
        self.returns.dim()
    }

    pub fn slice_days(&self, range: Range<usize>) -> TargetPanel {
        TargetPanel {
            returns: self.returns.slice(s![.., range]).to_owned(),
            horizon: self.horizon,
        }
    }
}

/// `returns[i, t] = close[i, t + horizon] / close[i, t] - 1`.
pub fn compute_targets(panel: &FeaturePanel, horizon: usize) -> Result<TargetPanel, PanelError> {
    let (n, t) = panel.shape();
    if horizon == 0 || horizon >= t {
        return Err(PanelError::Horizon { horizon, days: t });
    }
    let close = panel.feature(Feature::Close);
    let mask = panel.mask();
    let mut returns = Array2::from_elem((n, t), f64::NAN);
    for i in 0..n {
        for d in 0..t - horizon {
            if mask[(i, d)] && mask[(i, d + horizon)] {
                let r = close[(i, d + horizon)] / close[(i, d)] - 1.0;
                if r.is_finite() {
                    returns[(i, d)] = r;
                }
            }
        }
    }
    Ok(TargetPanel { returns, horizon })
}

/// Inclusive calendar-date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    fn overlaps(&self, other: &DateRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Day-index ranges of a train/validation/test split over one panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

/// Maps a date range to the half-open day-index range of the panel days it covers.
pub fn day_range(panel: &FeaturePanel, range: &DateRange) -> Result<Range<usize>, PanelError> {
    let dates = panel.dates();
    let (Some(first), Some(last)) = (dates.first(), dates.last()) else {
        return Err(PanelError::Split("panel has no days".into()));
    };
    if range.start > range.end {
        return Err(PanelError::Split(format!(
            "range {}..{} is reversed",
            range.start, range.end
        )));
    }
    if range.start < *first || range.end > *last {
        return Err(PanelError::Split(format!(
            "range {}..{} lies outside the panel span {first}..{last}",
            range.start, range.end
        )));
    }
    let lo = dates.partition_point(|d| *d < range.start);
    let hi = dates.partition_point(|d| *d <= range.end);
    if lo >= hi {
        return Err(PanelError::Split(format!(
            "range {}..{} contains no trading days",
            range.start, range.end
        )));
    }
    Ok(lo..hi)
}

/// Splits the day axis into three non-overlapping views sharing the stock axis.
pub fn split(
    panel: &FeaturePanel,
    train: &DateRange,
    valid: &DateRange,
    test: &DateRange,
) -> Result<Split, PanelError> {
    let named = [("train", train), ("valid", valid), ("test", test)];
    for (a, (na, ra)) in named.iter().enumerate() {
        for (nb, rb) in named.iter().skip(a + 1) {
            if ra.overlaps(rb) {
                return Err(PanelError::Split(format!("{na} and {nb} ranges overlap")));
            }
        }
    }
    Ok(Split {
        train: day_range(panel, train)?,
        valid: day_range(panel, valid)?,
        test: day_range(panel, test)?,
    })
}

/// Borrowed day-range view over a parent panel. Evaluation may read any day
/// before the view's end; targets may look past it.
#[derive(Debug, Clone)]
pub struct PanelView<'a> {
    pub panel: &'a FeaturePanel,
    pub days: Range<usize>,
}

impl<'a> PanelView<'a> {
    pub fn full(panel: &'a FeaturePanel) -> Self {
        PanelView {
            panel,
            days: 0..panel.n_days(),
        }
    }

    pub fn new(panel: &'a FeaturePanel, days: Range<usize>) -> Self {
        assert!(days.start <= days.end && days.end <= panel.n_days());
        PanelView { panel, days }
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn dates(&self) -> &'a [NaiveDate] {
        &self.panel.dates()[self.days.clone()]
    }
}
