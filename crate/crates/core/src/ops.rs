//! Operator semantics over (stock, day) matrices.
//!
//! NaN contract: every cell that is undefined (window warm-up, masked input,
//! log of a non-positive number, division by zero, zero-variance moments,
//! overflow) is NaN. A rolling window is defined only when all `w` inputs in
//! it are finite; masked days are not skipped over or filled.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{s, Array2, Zip};

use crate::dsl::{AlphaExpr, Node, OpKind, Operator};
use crate::panel::{FeaturePanel, PanelView};

/// Factor values per (stock, day); NaN exactly where undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    values: Array2<f64>,
}

impl FactorMatrix {
    /// Wraps raw values; non-finite cells become NaN.
    pub fn new(mut values: Array2<f64>) -> Self {
        values.mapv_inplace(|v| if v.is_finite() { v } else { f64::NAN });
        FactorMatrix { values }
    }

    pub fn filled(shape: (usize, usize), value: f64) -> Self {
        FactorMatrix::new(Array2::from_elem(shape, value))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn get(&self, stock: usize, day: usize) -> f64 {
        self.values[(stock, day)]
    }

    pub fn is_valid(&self, stock: usize, day: usize) -> bool {
        self.values[(stock, day)].is_finite()
    }

    pub fn valid(&self) -> Array2<bool> {
        self.values.mapv(f64::is_finite)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }

    pub fn slice_days(&self, range: std::ops::Range<usize>) -> FactorMatrix {
        FactorMatrix {
            values: self.values.slice(s![.., range]).to_owned(),
        }
    }

    /// Bit-exact comparison that treats NaN cells as equal.
    pub fn bit_identical(&self, other: &FactorMatrix) -> bool {
        self.shape() == other.shape()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// CSV with one row per date and one column per ticker; NaN cells are empty.
    pub fn to_csv(&self, dates: &[chrono::NaiveDate], tickers: &[String]) -> String {
        let mut out = String::from("date");
        for t in tickers {
            out.push(',');
            out.push_str(t);
        }
        out.push('\n');
        for (d, date) in dates.iter().enumerate() {
            write!(out, "{date}").expect("string write");
            for i in 0..tickers.len() {
                let v = self.values[(i, d)];
                out.push(',');
                if v.is_finite() {
                    write!(out, "{v}").expect("string write");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// An argument to an elementwise operator.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Series(&'a FactorMatrix),
    Scalar(f64),
}

impl Operand<'_> {
    #[inline]
    fn at(&self, i: usize, d: usize) -> f64 {
        match self {
            Operand::Series(m) => m.values[(i, d)],
            Operand::Scalar(c) => *c,
        }
    }
}

#[inline]
fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Cellwise operators: Abs, Log, Sign (unary) and Add, Sub, Mul, Div, Pow,
/// Greater (max), Less (min). Scalars broadcast to `shape`.
pub fn apply_elementwise(op: Operator, args: &[Operand<'_>], shape: (usize, usize)) -> FactorMatrix {
    let unary = |f: fn(f64) -> f64| {
        let x = args[0];
        Array2::from_shape_fn(shape, |(i, d)| clean(f(x.at(i, d))))
    };
    let binary = |f: fn(f64, f64) -> f64| {
        let (a, b) = (args[0], args[1]);
        Array2::from_shape_fn(shape, |(i, d)| {
            let (x, y) = (a.at(i, d), b.at(i, d));
            if x.is_nan() || y.is_nan() {
                f64::NAN
            } else {
                clean(f(x, y))
            }
        })
    };
    let values = match op {
        Operator::Abs => unary(f64::abs),
        Operator::Log => unary(|x| if x > 0.0 { x.ln() } else { f64::NAN }),
        Operator::Sign => unary(|x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else if x == 0.0 {
                0.0
            } else {
                f64::NAN
            }
        }),
        Operator::Add => binary(|x, y| x + y),
        Operator::Sub => binary(|x, y| x - y),
        Operator::Mul => binary(|x, y| x * y),
        Operator::Div => binary(|x, y| if y == 0.0 { f64::NAN } else { x / y }),
        Operator::Pow => binary(f64::powf),
        Operator::Greater => binary(|x, y| if x >= y { x } else { y }),
        Operator::Less => binary(|x, y| if x <= y { x } else { y }),
        other => panic!("{other} is not an elementwise operator"),
    };
    FactorMatrix { values }
}

/// `a` where `x > y`, else `b`; NaN when `x` or `y` is NaN.
pub fn apply_cond(
    x: Operand<'_>,
    y: Operand<'_>,
    a: Operand<'_>,
    b: Operand<'_>,
    shape: (usize, usize),
) -> FactorMatrix {
    let values = Array2::from_shape_fn(shape, |(i, d)| {
        let (xv, yv) = (x.at(i, d), y.at(i, d));
        if xv.is_nan() || yv.is_nan() {
            f64::NAN
        } else if xv > yv {
            a.at(i, d)
        } else {
            b.at(i, d)
        }
    });
    FactorMatrix::new(values)
}

fn all_equal(w: &[f64]) -> bool {
    w.iter().all(|v| *v == w[0])
}

fn mean(w: &[f64]) -> f64 {
    w.iter().sum::<f64>() / w.len() as f64
}

/// Population central moment of order `k` about `m`.
fn central(w: &[f64], m: f64, k: i32) -> f64 {
    w.iter().map(|v| (v - m).powi(k)).sum::<f64>() / w.len() as f64
}

/// Fractional rank of `x` among `w` in (0, 1], ties averaged.
fn fractional_rank(w: &[f64], x: f64) -> f64 {
    let (mut less, mut equal) = (0usize, 0usize);
    for v in w {
        match v.partial_cmp(&x) {
            Some(Ordering::Less) => less += 1,
            Some(Ordering::Equal) => equal += 1,
            _ => {}
        }
    }
    (less as f64 + (equal as f64 + 1.0) / 2.0) / w.len() as f64
}

/// Window kernel for one rolling operator; the slice is oldest first.
fn window_kernel(op: Operator, w: &[f64]) -> f64 {
    let n = w.len();
    let last = w[n - 1];
    match op {
        Operator::Sum => w.iter().sum(),
        Operator::Mean => mean(w),
        Operator::Product => w.iter().product(),
        Operator::Var | Operator::Std => {
            let var = if all_equal(w) { 0.0 } else { central(w, mean(w), 2) };
            if op == Operator::Std {
                var.sqrt()
            } else {
                var
            }
        }
        Operator::Max => w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Operator::Min => w.iter().copied().fold(f64::INFINITY, f64::min),
        Operator::Med => {
            let mut v = w.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite window"));
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        }
        Operator::Mad => {
            if all_equal(w) {
                0.0
            } else {
                let m = mean(w);
                w.iter().map(|v| (v - m).abs()).sum::<f64>() / n as f64
            }
        }
        Operator::WMA => {
            let num: f64 = w.iter().enumerate().map(|(j, v)| (j + 1) as f64 * v).sum();
            num / (n * (n + 1) / 2) as f64
        }
        Operator::EMA => {
            let alpha = 2.0 / (n as f64 + 1.0);
            let (mut num, mut den) = (0.0, 0.0);
            for (j, v) in w.iter().enumerate() {
                let weight = alpha * (1.0 - alpha).powi((n - 1 - j) as i32);
                num += weight * v;
                den += weight;
            }
            num / den
        }
        Operator::Rank => fractional_rank(w, last),
        Operator::Argmax | Operator::Argmin => {
            // earliest occurrence of the extreme, reported as days ago
            let mut best = 0;
            for j in 1..n {
                let better = if op == Operator::Argmax {
                    w[j] > w[best]
                } else {
                    w[j] < w[best]
                };
                if better {
                    best = j;
                }
            }
            (n - 1 - best) as f64
        }
        Operator::Skew | Operator::Kurt => {
            if all_equal(w) {
                return f64::NAN;
            }
            let m = mean(w);
            let mu2 = central(w, m, 2);
            if mu2 == 0.0 {
                return f64::NAN;
            }
            if op == Operator::Skew {
                central(w, m, 3) / mu2.powf(1.5)
            } else {
                central(w, m, 4) / (mu2 * mu2) - 3.0
            }
        }
        other => panic!("{other} has no window kernel"),
    }
}

/// Per-row running count of NaN cells, `counts[k]` = NaNs in `row[..k]`.
fn nan_prefix(row: &[f64]) -> Vec<usize> {
    let mut out = Vec::with_capacity(row.len() + 1);
    out.push(0);
    let mut c = 0;
    for v in row {
        c += v.is_nan() as usize;
        out.push(c);
    }
    out
}

/// Single-series rolling operators (including Skew and Kurt) over a trailing
/// window of `window` days.
pub fn apply_rolling(op: Operator, x: &FactorMatrix, window: usize) -> FactorMatrix {
    assert!(window >= 1, "window must be positive");
    let (n, t) = x.shape();
    let mut out = Array2::from_elem((n, t), f64::NAN);
    for i in 0..n {
        let row = x.values.row(i);
        let row = row.as_slice().map(|r| r.to_vec()).unwrap_or_else(|| row.to_vec());
        match op {
            Operator::Ref | Operator::Delta => {
                for d in window..t {
                    let (now, then) = (row[d], row[d - window]);
                    out[(i, d)] = if op == Operator::Ref { then } else { now - then };
                }
            }
            _ => {
                if window > t {
                    continue;
                }
                let nans = nan_prefix(&row);
                for d in window - 1..t {
                    let lo = d + 1 - window;
                    if nans[d + 1] - nans[lo] > 0 {
                        continue;
                    }
                    out[(i, d)] = window_kernel(op, &row[lo..=d]);
                }
            }
        }
    }
    FactorMatrix::new(out)
}

/// Skew / Kurt over a trailing window (population moments).
pub fn apply_moments(op: Operator, x: &FactorMatrix, window: usize) -> FactorMatrix {
    assert!(matches!(op, Operator::Skew | Operator::Kurt));
    apply_rolling(op, x, window)
}

/// Cov (sample) and Corr (Pearson) over paired trailing windows.
pub fn apply_pair_rolling(op: Operator, x: &FactorMatrix, y: &FactorMatrix, window: usize) -> FactorMatrix {
    assert!(window >= 1, "window must be positive");
    let (n, t) = x.shape();
    let mut out = Array2::from_elem((n, t), f64::NAN);
    if window > t {
        return FactorMatrix::new(out);
    }
    for i in 0..n {
        let xr = x.values.row(i).to_vec();
        let yr = y.values.row(i).to_vec();
        let nx = nan_prefix(&xr);
        let ny = nan_prefix(&yr);
        for d in window - 1..t {
            let lo = d + 1 - window;
            if nx[d + 1] - nx[lo] > 0 || ny[d + 1] - ny[lo] > 0 {
                continue;
            }
            let (wx, wy) = (&xr[lo..=d], &yr[lo..=d]);
            out[(i, d)] = match op {
                Operator::Cov => {
                    if window < 2 {
                        f64::NAN
                    } else {
                        let (mx, my) = (mean(wx), mean(wy));
                        wx.iter().zip(wy).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
                            / (window - 1) as f64
                    }
                }
                Operator::Corr => {
                    if all_equal(wx) || all_equal(wy) {
                        f64::NAN
                    } else {
                        let (mx, my) = (mean(wx), mean(wy));
                        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
                        for (a, b) in wx.iter().zip(wy) {
                            let (da, db) = (a - mx, b - my);
                            sxy += da * db;
                            sxx += da * da;
                            syy += db * db;
                        }
                        sxy / (sxx * syy).sqrt()
                    }
                }
                other => panic!("{other} is not a paired rolling operator"),
            };
        }
    }
    FactorMatrix::new(out)
}

/// CSRank (fractional rank in (0, 1], ties averaged) and Scale (`x / Σ|x|`)
/// across the stocks valid on each day.
pub fn apply_cross_sectional(op: Operator, x: &FactorMatrix) -> FactorMatrix {
    let (n, t) = x.shape();
    let mut out = Array2::from_elem((n, t), f64::NAN);
    let mut idx: Vec<usize> = Vec::with_capacity(n);
    for d in 0..t {
        let col = x.values.column(d);
        idx.clear();
        idx.extend((0..n).filter(|&i| col[i].is_finite()));
        if idx.is_empty() {
            continue;
        }
        match op {
            Operator::CSRank => {
                idx.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).expect("finite"));
                let m = idx.len();
                let mut k = 0;
                while k < m {
                    let mut j = k;
                    while j + 1 < m && col[idx[j + 1]] == col[idx[k]] {
                        j += 1;
                    }
                    // 1-based ranks k+1..=j+1 share their average
                    let avg = (k + j + 2) as f64 / 2.0;
                    for &i in &idx[k..=j] {
                        out[(i, d)] = avg / m as f64;
                    }
                    k = j + 1;
                }
            }
            Operator::Scale => {
                let total: f64 = idx.iter().map(|&i| col[i].abs()).sum();
                if total > 0.0 {
                    for &i in &idx {
                        out[(i, d)] = col[i] / total;
                    }
                }
            }
            other => panic!("{other} is not a cross-sectional operator"),
        }
    }
    FactorMatrix::new(out)
}

enum Value {
    Series(FactorMatrix),
    Scalar(f64),
    Window(usize),
}

struct Evaluator<'a> {
    panel: &'a FeaturePanel,
    end: usize,
}

impl Evaluator<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.panel.n_stocks(), self.end)
    }

    fn masked(&self, mut m: FactorMatrix) -> FactorMatrix {
        let mask = self.panel.mask().slice(s![.., ..self.end]);
        Zip::from(&mut m.values).and(&mask).for_each(|v, &ok| {
            if !ok {
                *v = f64::NAN
            }
        });
        m
    }

    fn eval(&self, node: &Node) -> Value {
        match node {
            Node::Feature(f) => Value::Series(FactorMatrix::new(
                self.panel.feature(*f).slice(s![.., ..self.end]).to_owned(),
            )),
            Node::Constant(c) => Value::Scalar(*c),
            Node::TimeDelta(d) => Value::Window(*d as usize),
            Node::Call(op, args) => {
                let vals: Vec<Value> = args.iter().map(|a| self.eval(a)).collect();
                Value::Series(self.masked(self.apply(*op, &vals)))
            }
        }
    }

    fn apply(&self, op: Operator, vals: &[Value]) -> FactorMatrix {
        let series = |k: usize| match &vals[k] {
            Value::Series(m) => m,
            _ => unreachable!("sort-checked"),
        };
        let window = |k: usize| match &vals[k] {
            Value::Window(w) => *w,
            _ => unreachable!("sort-checked"),
        };
        let operands: Vec<Operand<'_>> = vals
            .iter()
            .filter_map(|v| match v {
                Value::Series(m) => Some(Operand::Series(m)),
                Value::Scalar(c) => Some(Operand::Scalar(*c)),
                Value::Window(_) => None,
            })
            .collect();
        match op.signature().kind {
            OpKind::Elementwise => apply_elementwise(op, &operands, self.shape()),
            OpKind::CrossSectional => apply_cross_sectional(op, series(0)),
            OpKind::Rolling => apply_rolling(op, series(0), window(1)),
            OpKind::Moment => apply_moments(op, series(0), window(1)),
            OpKind::PairRolling => apply_pair_rolling(op, series(0), series(1), window(2)),
            OpKind::Conditional => apply_cond(
                operands[0],
                operands[1],
                operands[2],
                operands[3],
                self.shape(),
            ),
        }
    }
}

/// Evaluates an alpha over the whole panel. Raw values, masked cells NaN.
pub fn evaluate(expr: &AlphaExpr, panel: &FeaturePanel) -> FactorMatrix {
    evaluate_view(expr, &PanelView::full(panel))
}

/// Evaluates on the parent panel up to the view's last day and keeps the view's days,
/// so windows can warm up on earlier history without reading later data.
pub fn evaluate_view(expr: &AlphaExpr, view: &PanelView<'_>) -> FactorMatrix {
    let ev = Evaluator {
        panel: view.panel,
        end: view.days.end,
    };
    let full = match ev.eval(expr.root()) {
        Value::Series(m) => ev.masked(m),
        _ => unreachable!("alpha root is a series"),
    };
    if view.days.start == 0 {
        full
    } else {
        full.slice_days(view.days.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse;

    fn row(v: &[f64]) -> FactorMatrix {
        FactorMatrix::new(Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap())
    }

    fn last(m: &FactorMatrix) -> f64 {
        let (_, t) = m.shape();
        m.get(0, t - 1)
    }

    #[test]
    fn sign_cells() {
        let x = row(&[0.0, -3.2, 5.0]);
        let out = apply_elementwise(Operator::Sign, &[Operand::Series(&x)], x.shape());
        assert_eq!(out.values().as_slice().unwrap(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn pow_and_less() {
        let out = apply_elementwise(Operator::Pow, &[Operand::Scalar(2.0), Operand::Scalar(3.0)], (1, 1));
        assert_eq!(out.get(0, 0), 8.0);
        let out = apply_elementwise(Operator::Less, &[Operand::Scalar(0.2), Operand::Scalar(0.7)], (1, 1));
        assert_eq!(out.get(0, 0), 0.2);
        let out = apply_elementwise(Operator::Greater, &[Operand::Scalar(0.2), Operand::Scalar(0.7)], (1, 1));
        assert_eq!(out.get(0, 0), 0.7);
    }

    #[test]
    fn domain_errors_are_nan() {
        let x = row(&[0.0, -1.0, 4.0]);
        let log = apply_elementwise(Operator::Log, &[Operand::Series(&x)], x.shape());
        assert!(log.get(0, 0).is_nan() && log.get(0, 1).is_nan());
        assert_eq!(log.get(0, 2), 4f64.ln());
        let div = apply_elementwise(Operator::Div, &[Operand::Scalar(1.0), Operand::Series(&x)], x.shape());
        assert!(div.get(0, 0).is_nan());
        assert_eq!(div.get(0, 2), 0.25);
        let pow = apply_elementwise(Operator::Pow, &[Operand::Series(&x), Operand::Scalar(0.5)], x.shape());
        assert!(pow.get(0, 1).is_nan());
        let pow = apply_elementwise(Operator::Pow, &[Operand::Series(&x), Operand::Scalar(-1.0)], x.shape());
        assert!(pow.get(0, 0).is_nan());
        let nan = row(&[f64::NAN]);
        let g = apply_elementwise(Operator::Greater, &[Operand::Series(&nan), Operand::Scalar(1.0)], (1, 1));
        assert!(g.get(0, 0).is_nan());
    }

    #[test]
    fn rolling_examples() {
        assert_eq!(last(&apply_rolling(Operator::Delta, &row(&[5.0, 7.0, 9.0]), 1)), 2.0);
        assert_eq!(last(&apply_rolling(Operator::Product, &row(&[2.0, 3.0, 4.0]), 3)), 24.0);
        assert_eq!(last(&apply_rolling(Operator::Argmax, &row(&[1.0, 5.0, 2.0]), 3)), 1.0);
        assert_eq!(last(&apply_rolling(Operator::Argmin, &row(&[1.0, 5.0, 2.0]), 3)), 2.0);
        assert!((last(&apply_rolling(Operator::Rank, &row(&[10.0, 30.0, 20.0]), 3)) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(last(&apply_rolling(Operator::Ref, &row(&[5.0, 7.0, 9.0]), 2)), 5.0);
        assert_eq!(last(&apply_rolling(Operator::Med, &row(&[4.0, 1.0, 3.0, 2.0]), 4)), 2.5);
        // weights 1,2,3 newest heaviest
        assert!((last(&apply_rolling(Operator::WMA, &row(&[1.0, 2.0, 3.0]), 3)) - 14.0 / 6.0).abs() < 1e-15);
        assert!((last(&apply_rolling(Operator::Mad, &row(&[1.0, 2.0, 3.0]), 3)) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn warm_up_and_nan_windows() {
        let m = apply_rolling(Operator::Mean, &row(&[1.0, 2.0, 3.0, 4.0]), 3);
        assert!(m.get(0, 0).is_nan() && m.get(0, 1).is_nan());
        assert_eq!(m.get(0, 2), 2.0);
        let r = apply_rolling(Operator::Ref, &row(&[1.0, 2.0, 3.0, 4.0]), 3);
        assert!(r.get(0, 2).is_nan());
        assert_eq!(r.get(0, 3), 1.0);
        let gap = apply_rolling(Operator::Sum, &row(&[1.0, f64::NAN, 3.0, 4.0, 5.0]), 2);
        assert!(gap.get(0, 1).is_nan() && gap.get(0, 2).is_nan());
        assert_eq!(gap.get(0, 3), 7.0);
        let long = apply_rolling(Operator::Sum, &row(&[1.0, 2.0]), 5);
        assert_eq!(long.valid_count(), 0);
    }

    #[test]
    fn moments() {
        let w = row(&[1.0, 2.0, 3.0]);
        assert_eq!(last(&apply_moments(Operator::Skew, &w, 3)), 0.0);
        let k = last(&apply_moments(Operator::Kurt, &w, 3));
        assert!((k - (-1.5)).abs() < 1e-12, "{k}");
        let c = row(&[2.0, 2.0, 2.0]);
        assert!(last(&apply_moments(Operator::Skew, &c, 3)).is_nan());
        assert!(last(&apply_moments(Operator::Kurt, &c, 3)).is_nan());
    }

    #[test]
    fn corr_degenerate() {
        let x = row(&[1.0, 1.0, 1.0]);
        let y = row(&[1.0, 2.0, 3.0]);
        assert!(last(&apply_pair_rolling(Operator::Corr, &x, &y, 3)).is_nan());
        assert!((last(&apply_pair_rolling(Operator::Corr, &y, &y, 3)) - 1.0).abs() < 1e-15);
        assert_eq!(last(&apply_pair_rolling(Operator::Cov, &y, &y, 3)), 1.0);
    }

    fn column(v: &[f64]) -> FactorMatrix {
        FactorMatrix::new(Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap())
    }

    #[test]
    fn cross_sectional() {
        let r = apply_cross_sectional(Operator::CSRank, &column(&[10.0, 20.0, 30.0]));
        let got: Vec<f64> = r.values().iter().copied().collect();
        assert_eq!(got, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let s = apply_cross_sectional(Operator::Scale, &column(&[1.0, -1.0, 2.0]));
        let got: Vec<f64> = s.values().iter().copied().collect();
        assert_eq!(got, vec![0.25, -0.25, 0.5]);
        let n = 5.0;
        let eq = apply_cross_sectional(Operator::CSRank, &column(&[3.0; 5]));
        assert!(eq.values().iter().all(|v| *v == (n + 1.0) / (2.0 * n)));
        let z = apply_cross_sectional(Operator::Scale, &column(&[0.0, 0.0]));
        assert_eq!(z.valid_count(), 0);
    }

    #[test]
    fn cond_broadcast() {
        let s = (2, 3);
        let t = apply_cond(Operand::Scalar(3.0), Operand::Scalar(2.0), Operand::Scalar(10.0), Operand::Scalar(20.0), s);
        assert!(t.values().iter().all(|v| *v == 10.0));
        let f = apply_cond(Operand::Scalar(2.0), Operand::Scalar(3.0), Operand::Scalar(10.0), Operand::Scalar(20.0), s);
        assert!(f.values().iter().all(|v| *v == 20.0));
        let x = row(&[1.0, f64::NAN]);
        let c = apply_cond(Operand::Series(&x), Operand::Scalar(0.0), Operand::Scalar(1.0), Operand::Scalar(2.0), (1, 2));
        assert_eq!(c.get(0, 0), 1.0);
        assert!(c.get(0, 1).is_nan());
    }

    fn tiny_panel() -> FeaturePanel {
        let (n, t) = (3, 8);
        let base = Array2::from_shape_fn((n, t), |(i, d)| 10.0 + i as f64 + (d as f64 * 0.7).sin());
        let mut mask = Array2::from_elem((n, t), true);
        mask[(1, 4)] = false;
        let values = (0..6).map(|k| base.mapv(|v| v + k as f64)).collect();
        let start = chrono::NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let dates = (0..t).map(|d| start + chrono::Days::new(d as u64)).collect();
        FeaturePanel::new(values, mask, dates, vec!["A".into(), "B".into(), "C".into()]).unwrap()
    }

    #[test]
    fn evaluate_identities() {
        let p = tiny_panel();
        let close = evaluate(&parse("close").unwrap(), &p);
        assert!(close.bit_identical(&FactorMatrix::new(p.feature(crate::dsl::Feature::Close).clone())));
        let plus0 = evaluate(&parse("Add(close, 0)").unwrap(), &p);
        assert!(plus0.bit_identical(&close));
        let delta = evaluate(&parse("Delta(close, 2)").unwrap(), &p);
        let sub = evaluate(&parse("Sub(close, Ref(close, 2))").unwrap(), &p);
        assert!(delta.bit_identical(&sub));
        // Ref must not carry a value onto a masked day
        let r = evaluate(&parse("Ref(close, 1)").unwrap(), &p);
        assert!(r.get(1, 4).is_nan());
        assert!(r.get(1, 5).is_nan());
    }

    #[test]
    fn view_evaluation_matches_slice() {
        let p = tiny_panel();
        let e = parse("Mean(close, 3)").unwrap();
        let full = evaluate(&e, &p);
        let view = evaluate_view(&e, &PanelView::new(&p, 3..6));
        assert!(view.bit_identical(&full.slice_days(3..6)));
    }

    #[test]
    fn csv_export() {
        let m = FactorMatrix::new(Array2::from_shape_vec((2, 1), vec![1.5, f64::NAN]).unwrap());
        let d = [chrono::NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()];
        assert_eq!(m.to_csv(&d, &["A".into(), "B".into()]), "date,A,B\n2020-01-02,1.5,\n");
    }
}
