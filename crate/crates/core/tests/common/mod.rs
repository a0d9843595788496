//! Naive reference implementations and random instance builders shared by
//! the integration tests and the acceptance suite.
//!
//! Everything here works cell by cell on plain `Vec<Vec<f64>>` grids
//! (`grid[stock][day]`) and is written without reusing library kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;

use alphaforge_core::backtest::{BacktestParams, BacktestReport, Side};
use alphaforge_core::dsl::{Feature, Operator, TIME_DELTAS};
use alphaforge_core::ops::FactorMatrix;
use alphaforge_core::panel::{FeaturePanel, TargetPanel};
use alphaforge_core::synth::business_days;
use chrono::NaiveDate;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Grid = Vec<Vec<f64>>;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn grid_of(m: &FactorMatrix) -> Grid {
    let (n, t) = m.shape();
    (0..n).map(|i| (0..t).map(|d| m.get(i, d)).collect()).collect()
}

pub fn matrix_of(g: &Grid) -> FactorMatrix {
    let (n, t) = (g.len(), g[0].len());
    FactorMatrix::new(Array2::from_shape_fn((n, t), |(i, d)| g[i][d]))
}

pub fn target_of(g: &Grid) -> TargetPanel {
    let (n, t) = (g.len(), g[0].len());
    TargetPanel {
        returns: Array2::from_shape_fn((n, t), |(i, d)| g[i][d]),
        horizon: 1,
    }
}

fn finite_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Equal within `tol` relative to the larger magnitude (absolute below 1), or both NaN.
pub fn agree(a: f64, b: f64, tol: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// First disagreement between a library result and a reference grid.
pub fn compare(got: &FactorMatrix, want: &Grid, tol: f64) -> Result<(), String> {
    let (n, t) = got.shape();
    if n != want.len() || t != want[0].len() {
        return Err(format!("shape {:?} vs {}x{}", got.shape(), want.len(), want[0].len()));
    }
    for i in 0..n {
        for d in 0..t {
            let (a, b) = (got.get(i, d), want[i][d]);
            if !agree(a, b, tol) {
                return Err(format!("cell ({i}, {d}): got {a}, want {b}"));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
pub enum Arg<'a> {
    Grid(&'a Grid),
    Scalar(f64),
}

impl Arg<'_> {
    fn at(&self, i: usize, d: usize) -> f64 {
        match self {
            Arg::Grid(g) => g[i][d],
            Arg::Scalar(c) => *c,
        }
    }
}

pub fn ref_unary(op: Operator, x: &Grid) -> Grid {
    x.iter()
        .map(|row| {
            row.iter()
                .map(|&v| {
                    if v.is_nan() {
                        return f64::NAN;
                    }
                    finite_or_nan(match op {
                        Operator::Abs => {
                            if v < 0.0 {
                                -v
                            } else {
                                v
                            }
                        }
                        Operator::Log => {
                            if v <= 0.0 {
                                f64::NAN
                            } else {
                                v.ln()
                            }
                        }
                        Operator::Sign => {
                            if v == 0.0 {
                                0.0
                            } else if v > 0.0 {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                        other => panic!("{other} is not unary"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn ref_binary(op: Operator, a: Arg<'_>, b: Arg<'_>, n: usize, t: usize) -> Grid {
    (0..n)
        .map(|i| {
            (0..t)
                .map(|d| {
                    let (x, y) = (a.at(i, d), b.at(i, d));
                    if x.is_nan() || y.is_nan() {
                        return f64::NAN;
                    }
                    finite_or_nan(match op {
                        Operator::Add => x + y,
                        Operator::Sub => x - y,
                        Operator::Mul => x * y,
                        Operator::Div => {
                            if y == 0.0 {
                                f64::NAN
                            } else {
                                x / y
                            }
                        }
                        Operator::Pow => x.powf(y),
                        Operator::Greater => {
                            if y > x {
                                y
                            } else {
                                x
                            }
                        }
                        Operator::Less => {
                            if y < x {
                                y
                            } else {
                                x
                            }
                        }
                        other => panic!("{other} is not binary"),
                    })
                })
                .collect()
        })
        .collect()
}

pub fn ref_cond(x: Arg<'_>, y: Arg<'_>, a: Arg<'_>, b: Arg<'_>, n: usize, t: usize) -> Grid {
    (0..n)
        .map(|i| {
            (0..t)
                .map(|d| {
                    let (xv, yv) = (x.at(i, d), y.at(i, d));
                    if xv.is_nan() || yv.is_nan() {
                        f64::NAN
                    } else if xv > yv {
                        a.at(i, d)
                    } else {
                        b.at(i, d)
                    }
                })
                .collect()
        })
        .collect()
}

fn sorted(w: &[f64]) -> Vec<f64> {
    let mut v = w.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Population variance by Welford's update.
fn welford_var(w: &[f64]) -> f64 {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &v) in w.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    m2 / w.len() as f64
}

fn plain_mean(w: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in w {
        s += v;
    }
    s / w.len() as f64
}

fn constant(w: &[f64]) -> bool {
    let s = sorted(w);
    s[0] == s[s.len() - 1]
}

/// 1-based average rank of `x` within `w` (which contains `x`).
fn average_rank(w: &[f64], x: f64) -> f64 {
    let s = sorted(w);
    let first = s.iter().position(|v| *v == x).unwrap();
    let last = s.iter().rposition(|v| *v == x).unwrap();
    (first + last + 2) as f64 / 2.0
}

fn ref_kernel(op: Operator, w: &[f64]) -> f64 {
    let n = w.len();
    let nf = n as f64;
    match op {
        Operator::Sum => w.iter().fold(0.0, |a, v| a + v),
        Operator::Mean => plain_mean(w),
        Operator::Product => w.iter().fold(1.0, |a, v| a * v),
        Operator::Var => {
            if constant(w) {
                0.0
            } else {
                welford_var(w)
            }
        }
        Operator::Std => {
            if constant(w) {
                0.0
            } else {
                welford_var(w).sqrt()
            }
        }
        Operator::Max => sorted(w)[n - 1],
        Operator::Min => sorted(w)[0],
        Operator::Med => {
            let s = sorted(w);
            if n % 2 == 0 {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            } else {
                s[(n - 1) / 2]
            }
        }
        Operator::Mad => {
            if constant(w) {
                return 0.0;
            }
            let m = plain_mean(w);
            w.iter().map(|v| (v - m).abs()).sum::<f64>() / nf
        }
        Operator::WMA => {
            let (mut num, mut den) = (0.0, 0.0);
            for (k, v) in w.iter().enumerate() {
                num += (k + 1) as f64 * v;
                den += (k + 1) as f64;
            }
            num / den
        }
        Operator::EMA => {
            let alpha = 2.0 / (nf + 1.0);
            let mut num = 0.0;
            for ago in 0..n {
                num += alpha * (1.0 - alpha).powi(ago as i32) * w[n - 1 - ago];
            }
            num / (1.0 - (1.0 - alpha).powi(n as i32))
        }
        Operator::Rank => average_rank(w, w[n - 1]) / nf,
        Operator::Argmax | Operator::Argmin => {
            let s = sorted(w);
            let extreme = if op == Operator::Argmax { s[n - 1] } else { s[0] };
            let first = w.iter().position(|v| *v == extreme).unwrap();
            (n - 1 - first) as f64
        }
        Operator::Skew | Operator::Kurt => {
            if constant(w) {
                return f64::NAN;
            }
            let m = plain_mean(w);
            let mut m2 = 0.0;
            let mut m3 = 0.0;
            let mut m4 = 0.0;
            for v in w {
                let d = v - m;
                m2 += d * d / nf;
                m3 += d * d * d / nf;
                m4 += d * d * d * d / nf;
            }
            if op == Operator::Skew {
                m3 / (m2 * m2.sqrt())
            } else {
                m4 / (m2 * m2) - 3.0
            }
        }
        other => panic!("{other} has no reference kernel"),
    }
}

pub fn ref_rolling(op: Operator, x: &Grid, w: usize) -> Grid {
    x.iter()
        .map(|row| {
            (0..row.len())
                .map(|d| match op {
                    Operator::Ref => {
                        if d >= w {
                            row[d - w]
                        } else {
                            f64::NAN
                        }
                    }
                    Operator::Delta => {
                        if d >= w {
                            row[d] - row[d - w]
                        } else {
                            f64::NAN
                        }
                    }
                    _ => {
                        if d + 1 < w {
                            return f64::NAN;
                        }
                        let win = &row[d + 1 - w..=d];
                        if win.iter().any(|v| v.is_nan()) {
                            return f64::NAN;
                        }
                        finite_or_nan(ref_kernel(op, win))
                    }
                })
                .collect()
        })
        .collect()
}

pub fn ref_pair(op: Operator, x: &Grid, y: &Grid, w: usize) -> Grid {
    x.iter()
        .zip(y)
        .map(|(xr, yr)| {
            (0..xr.len())
                .map(|d| {
                    if d + 1 < w {
                        return f64::NAN;
                    }
                    let (wx, wy) = (&xr[d + 1 - w..=d], &yr[d + 1 - w..=d]);
                    if wx.iter().chain(wy).any(|v| v.is_nan()) {
                        return f64::NAN;
                    }
                    let (mx, my) = (plain_mean(wx), plain_mean(wy));
                    let cross: f64 = wx.iter().zip(wy).map(|(a, b)| (a - mx) * (b - my)).sum();
                    match op {
                        Operator::Cov => {
                            if w < 2 {
                                f64::NAN
                            } else {
                                cross / (w - 1) as f64
                            }
                        }
                        Operator::Corr => {
                            if constant(wx) || constant(wy) {
                                f64::NAN
                            } else {
                                finite_or_nan(cross / (welford_var(wx) * welford_var(wy)).sqrt() / w as f64)
                            }
                        }
                        other => panic!("{other} is not paired"),
                    }
                })
                .collect()
        })
        .collect()
}

pub fn ref_cross_sectional(op: Operator, x: &Grid) -> Grid {
    let (n, t) = (x.len(), x[0].len());
    let mut out = vec![vec![f64::NAN; t]; n];
    for d in 0..t {
        let valid: Vec<usize> = (0..n).filter(|&i| x[i][d].is_finite()).collect();
        let m = valid.len() as f64;
        match op {
            Operator::CSRank => {
                for &i in &valid {
                    let v = x[i][d];
                    let less = valid.iter().filter(|&&j| x[j][d] < v).count() as f64;
                    let equal = valid.iter().filter(|&&j| x[j][d] == v).count() as f64;
                    out[i][d] = (less + (equal + 1.0) / 2.0) / m;
                }
            }
            Operator::Scale => {
                let total: f64 = valid.iter().map(|&i| x[i][d].abs()).sum();
                for &i in &valid {
                    out[i][d] = if total > 0.0 { x[i][d] / total } else { f64::NAN };
                }
            }
            other => panic!("{other} is not cross-sectional"),
        }
    }
    out
}

/// Random values with NaN holes and frequent exact ties.
pub fn random_grid(rng: &mut ChaCha8Rng, n: usize, t: usize, nan_rate: f64) -> Grid {
    (0..n)
        .map(|_| {
            (0..t)
                .map(|_| {
                    if rng.gen::<f64>() < nan_rate {
                        return f64::NAN;
                    }
                    let v = 3.0 * normal(rng);
                    if rng.gen::<f64>() < 0.3 {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

/// Windows drawn from the generator grid plus a few short ones.
pub fn random_window(rng: &mut ChaCha8Rng) -> usize {
    let small = [1usize, 2, 3];
    if rng.gen::<f64>() < 0.3 {
        small[rng.gen_range(0..small.len())]
    } else {
        TIME_DELTAS[rng.gen_range(0..TIME_DELTAS.len())] as usize
    }
}

/// Panel with positive prices, a few masked cells and rounded (tied) values.
pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize, missing: f64) -> FeaturePanel {
    let mut close = Array2::zeros((n, t));
    for i in 0..n {
        let mut p = 20.0 * (0.5 * normal(rng)).exp();
        for d in 0..t {
            p *= (0.02 * normal(rng)).exp();
            close[(i, d)] = (p * 100.0).round() / 100.0;
        }
    }
    let jitter = |rng: &mut ChaCha8Rng, c: f64| ((c * (1.0 + 0.01 * normal(rng))) * 100.0).round() / 100.0;
    let open = close.mapv(|c| jitter(rng, c));
    let high = close.mapv(|c| jitter(rng, c) + 0.05);
    let low = close.mapv(|c| jitter(rng, c) - 0.05);
    let vwap = close.mapv(|c| jitter(rng, c));
    let volume = close.mapv(|_| (1000.0 * (normal(rng)).exp()).round());
    let mask = Array2::from_shape_fn((n, t), |_| rng.gen::<f64>() >= missing);
    let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
    FeaturePanel::new(
        vec![open, close, high, low, volume, vwap],
        mask,
        business_days(start, t),
        (0..n).map(|i| format!("T{i:02}")).collect(),
    )
    .unwrap()
}

/// Pearson correlation by two-pass sums; `None` for < 2 points or a constant side.
pub fn ref_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || constant(x) || constant(y) {
        return None;
    }
    let (mx, my) = (plain_mean(x), plain_mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..x.len() {
        sxy += (x[k] - mx) * (y[k] - my);
        sxx += (x[k] - mx) * (x[k] - mx);
        syy += (y[k] - my) * (y[k] - my);
    }
    Some(sxy / sxx.sqrt() / syy.sqrt())
}

fn ranks_by_counting(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let less = v.iter().filter(|&&u| u < x).count() as f64;
            let equal = v.iter().filter(|&&u| u == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn daily_pairs(f: &Grid, y: &Grid, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..f.len() {
        if f[i][d].is_finite() && y[i][d].is_finite() {
            xs.push(f[i][d]);
            ys.push(y[i][d]);
        }
    }
    (xs, ys)
}

/// Mean daily Pearson (or Spearman with `rank`) over usable days.
pub fn ref_ic(f: &Grid, y: &Grid, rank: bool) -> Option<f64> {
    let mut total = 0.0;
    let mut used = 0;
    for d in 0..f[0].len() {
        let (xs, ys) = daily_pairs(f, y, d);
        let r = if rank {
            if xs.len() < 2 || constant(&xs) || constant(&ys) {
                None
            } else {
                ref_pearson(&ranks_by_counting(&xs), &ranks_by_counting(&ys))
            }
        } else {
            ref_pearson(&xs, &ys)
        };
        if let Some(r) = r {
            total += r;
            used += 1;
        }
    }
    (used > 0).then(|| total / used as f64)
}

pub fn combine_grids(factors: &[Grid], w: &[f64]) -> Grid {
    let (n, t) = (factors[0].len(), factors[0][0].len());
    (0..n)
        .map(|i| {
            (0..t)
                .map(|d| {
                    let mut s = 0.0;
                    for (f, wj) in factors.iter().zip(w) {
                        s += wj * f[i][d];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Day-wise z-score with population std.
pub fn ref_zscore(x: &Grid) -> Grid {
    let (n, t) = (x.len(), x[0].len());
    let mut out = vec![vec![f64::NAN; t]; n];
    for d in 0..t {
        let col: Vec<f64> = (0..n).map(|i| x[i][d]).filter(|v| v.is_finite()).collect();
        if col.len() < 2 || constant(&col) {
            continue;
        }
        let m = plain_mean(&col);
        let sd = welford_var(&col).sqrt();
        for i in 0..n {
            if x[i][d].is_finite() {
                out[i][d] = (x[i][d] - m) / sd;
            }
        }
    }
    out
}

/// Target plus `k` factors of varying informativeness, with NaN holes.
pub fn random_ic_instance(rng: &mut ChaCha8Rng, k: usize, n: usize, t: usize) -> (Vec<Grid>, Grid) {
    let y = random_grid(rng, n, t, 0.03);
    let factors = (0..k)
        .map(|_| {
            let load = normal(rng);
            let noise = random_grid(rng, n, t, 0.03);
            (0..n)
                .map(|i| (0..t).map(|d| load * y[i][d] + noise[i][d]).collect())
                .collect()
        })
        .collect();
    (factors, y)
}

/// Best IC over `points` equally spaced directions `(cos θ, sin θ)`.
pub fn angle_sweep(f1: &Grid, f2: &Grid, y: &Grid, points: usize) -> f64 {
    let factors = [f1.clone(), f2.clone()];
    let mut best = f64::NEG_INFINITY;
    for k in 0..points {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / points as f64;
        let z = combine_grids(&factors, &[theta.cos(), theta.sin()]);
        if let Some(ic) = ref_ic(&z, y, false) {
            best = best.max(ic);
        }
    }
    best
}

fn random_arg<'a>(rng: &mut ChaCha8Rng, g: &'a Grid) -> Arg<'a> {
    if rng.gen::<f64>() < 0.25 {
        Arg::Scalar((4.0 * normal(rng)).round() / 2.0)
    } else {
        Arg::Grid(g)
    }
}

fn operand<'a>(a: &Arg<'_>, storage: &'a FactorMatrix) -> alphaforge_core::ops::Operand<'a> {
    match a {
        Arg::Grid(_) => alphaforge_core::ops::Operand::Series(storage),
        Arg::Scalar(c) => alphaforge_core::ops::Operand::Scalar(*c),
    }
}

/// One random kernel-level comparison of `op` against its reference.
pub fn check_kernel(op: Operator, rng: &mut ChaCha8Rng, n: usize, t: usize, tol: f64) -> Result<(), String> {
    use alphaforge_core::dsl::OpKind;
    use alphaforge_core::ops::*;
    let grids: Vec<Grid> = (0..4).map(|_| random_grid(rng, n, t, 0.02)).collect();
    let mats: Vec<FactorMatrix> = grids.iter().map(matrix_of).collect();
    let (got, want) = match op.signature().kind {
        OpKind::Elementwise if op.arity() == 1 => (
            apply_elementwise(op, &[Operand::Series(&mats[0])], (n, t)),
            ref_unary(op, &grids[0]),
        ),
        OpKind::Elementwise => {
            let mut a = random_arg(rng, &grids[0]);
            let b = random_arg(rng, &grids[1]);
            if let (Arg::Scalar(_), Arg::Scalar(_)) = (a, b) {
                a = Arg::Grid(&grids[0]);
            }
            (
                apply_elementwise(op, &[operand(&a, &mats[0]), operand(&b, &mats[1])], (n, t)),
                ref_binary(op, a, b, n, t),
            )
        }
        OpKind::CrossSectional => (apply_cross_sectional(op, &mats[0]), ref_cross_sectional(op, &grids[0])),
        OpKind::Rolling | OpKind::Moment => {
            let w = random_window(rng);
            (apply_rolling(op, &mats[0], w), ref_rolling(op, &grids[0], w))
        }
        OpKind::PairRolling => {
            let w = random_window(rng);
            (apply_pair_rolling(op, &mats[0], &mats[1], w), ref_pair(op, &grids[0], &grids[1], w))
        }
        OpKind::Conditional => {
            let args: Vec<Arg<'_>> = (0..4)
                .map(|k| if k == 0 { Arg::Grid(&grids[0]) } else { random_arg(rng, &grids[k]) })
                .collect();
            let ops: Vec<Operand<'_>> = args.iter().zip(&mats).map(|(a, m)| operand(a, m)).collect();
            (
                apply_cond(ops[0], ops[1], ops[2], ops[3], (n, t)),
                ref_cond(args[0], args[1], args[2], args[3], n, t),
            )
        }
    };
    compare(&got, &want, tol).map_err(|e| format!("{op}: {e}"))
}

/// Evaluates `op` applied to panel features through the parser and the
/// evaluator, and compares against the reference with the mask applied.
pub fn check_expression(
    op: Operator,
    panel: &FeaturePanel,
    rng: &mut ChaCha8Rng,
    tol: f64,
) -> Result<(), String> {
    use alphaforge_core::dsl::{parse, Feature, OpKind};
    use alphaforge_core::ops::evaluate;
    let (n, t) = panel.shape();
    let feat = |f: Feature| grid_of(&FactorMatrix::new(panel.feature(f).clone()));
    let (close, open, volume, high) = (feat(Feature::Close), feat(Feature::Open), feat(Feature::Volume), feat(Feature::High));
    let name = op.name();
    let w = random_window(rng);
    let (text, want) = match op.signature().kind {
        OpKind::Elementwise if op.arity() == 1 => {
            // the difference has both signs, so Log and Sign hit every branch
            let inner = ref_binary(Operator::Sub, Arg::Grid(&close), Arg::Grid(&open), n, t);
            (format!("{name}(Sub(close, open))"), ref_unary(op, &inner))
        }
        OpKind::Elementwise => (format!("{name}(close, open)"), ref_binary(op, Arg::Grid(&close), Arg::Grid(&open), n, t)),
        OpKind::CrossSectional => (format!("{name}(volume)"), ref_cross_sectional(op, &volume)),
        OpKind::Rolling | OpKind::Moment => (format!("{name}(close, {w})"), ref_rolling(op, &close, w)),
        OpKind::PairRolling => (format!("{name}(close, volume, {w})"), ref_pair(op, &close, &volume, w)),
        OpKind::Conditional => (
            format!("{name}(close, open, high, -1)"),
            ref_cond(Arg::Grid(&close), Arg::Grid(&open), Arg::Grid(&high), Arg::Scalar(-1.0), n, t),
        ),
    };
    let expr = parse(&text).map_err(|e| format!("{text}: {e}"))?;
    let got = evaluate(&expr, panel);
    let mask = panel.mask();
    let masked: Grid = (0..n)
        .map(|i| (0..t).map(|d| if mask[(i, d)] { want[i][d] } else { f64::NAN }).collect())
        .collect();
    compare(&got, &masked, tol).map_err(|e| format!("{text}: {e}"))
}

/// Uniformly random legal program of at most `max_len` tokens.
pub fn random_formula(rng: &mut ChaCha8Rng, max_len: usize) -> alphaforge_core::dsl::AlphaExpr {
    use alphaforge_core::dsl::{AlphaExpr, PrefixState, Token, Vocabulary};
    let vocab = Vocabulary::default();
    let mut state = PrefixState::new();
    let mut tokens = vec![Token::Beg];
    loop {
        let mask = state.legal_mask(&vocab, max_len - state.emitted());
        let legal: Vec<usize> = (0..mask.len()).filter(|&k| mask[k]).collect();
        let tok = vocab.token(legal[rng.gen_range(0..legal.len())]);
        tokens.push(tok);
        if tok == Token::Sep {
            return AlphaExpr::from_tokens(&tokens).expect("masked programs are valid");
        }
        state = state.apply(&tok).expect("legal token applies");
    }
}

/// Central finite difference of the reference IC of `Σ w_j f_j`.
pub fn fd_gradient(factors: &[Grid], y: &Grid, w: &[f64], h: f64) -> Vec<f64> {
    (0..w.len())
        .map(|j| {
            let mut up = w.to_vec();
            let mut down = w.to_vec();
            up[j] += h;
            down[j] -= h;
            let f = |w: &[f64]| ref_ic(&combine_grids(factors, w), y, false).unwrap();
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}


// Backtest instances

pub const CAPITAL: f64 = 1_000_000.0;

pub fn random_case(rng: &mut ChaCha8Rng) -> (FeaturePanel, FactorMatrix, BacktestParams) {
    let (n, t) = (rng.gen_range(3..12), rng.gen_range(10..60));
    let panel = random_panel(rng, n, t, 0.05);
    let sig = random_grid(rng, n, t, 0.05);
    let top_k = rng.gen_range(1..=n.min(5));
    let params = BacktestParams {
        top_k,
        swap_n: rng.gen_range(0..=top_k),
        min_hold_days: rng.gen_range(0..6),
        enter_threshold: [-1e18, 0.0, 1.0][rng.gen_range(0..3)],
        start: panel.dates()[rng.gen_range(0..t / 2)],
        end: panel.dates()[t - 1],
        initial_capital: CAPITAL,
        fee_bps: 0.0,
    };
    (panel, matrix_of(&sig), params)
}

/// Rebuilds each day's equity from the trade ledger alone.
pub fn replay_equity(report: &BacktestReport, panel: &FeaturePanel) -> Vec<f64> {
    let close = panel.feature(Feature::Close);
    let mask = panel.mask();
    let idx: BTreeMap<&str, usize> = panel.tickers().iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut cash = CAPITAL;
    let mut shares: BTreeMap<usize, f64> = BTreeMap::new();
    let mut out = Vec::new();
    for day in &report.days {
        for tr in report.trades.iter().filter(|t| t.date == day.date) {
            let i = idx[tr.ticker.as_str()];
            match tr.side {
                Side::Buy => {
                    cash -= tr.shares * tr.price;
                    shares.insert(i, tr.shares);
                }
                Side::Sell => {
                    cash += tr.shares * tr.price;
                    shares.remove(&i);
                }
            }
        }
        let d = panel.day_of(day.date).unwrap();
        let value: f64 = shares
            .iter()
            .map(|(&i, s)| {
                let last = (0..=d).rev().find(|&k| mask[(i, k)]).unwrap();
                s * close[(i, last)]
            })
            .sum();
        out.push(cash + value);
    }
    out
}

pub fn perturb_after(panel: &FeaturePanel, sig: &FactorMatrix, cut: usize, rng: &mut ChaCha8Rng) -> (FeaturePanel, FactorMatrix) {
    let (n, t) = panel.shape();
    let fresh = random_panel(rng, n, t, 0.3);
    let values = Feature::ALL
        .iter()
        .map(|&f| Array2::from_shape_fn((n, t), |(i, d)| if d > cut { fresh.feature(f)[(i, d)] } else { panel.feature(f)[(i, d)] }))
        .collect();
    let mask = Array2::from_shape_fn((n, t), |(i, d)| if d > cut { fresh.mask()[(i, d)] } else { panel.mask()[(i, d)] });
    let p = FeaturePanel::new(values, mask, panel.dates().to_vec(), panel.tickers().to_vec()).unwrap();
    let s = FactorMatrix::new(Array2::from_shape_fn((n, t), |(i, d)| if d > cut { normal(rng) } else { sig.get(i, d) }));
    (p, s)
}

