//! Information coefficients and the IC gradient of a weighted combination.
//!
//! IC is the time mean of daily cross-sectional Pearson correlations between
//! a factor and forward returns. Each day uses only stocks where both sides
//! are finite; days with fewer than two such stocks, or with a constant side,
//! are skipped.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ops::FactorMatrix;
use crate::panel::TargetPanel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no overlapping valid data")]
    NoOverlap,
    #[error("shape mismatch: factor {factor:?}, target {target:?}")]
    Shape {
        factor: (usize, usize),
        target: (usize, usize),
    },
    #[error("expected {expected} weights, got {got}")]
    Weights { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ICReport {
    pub ic: f64,
    pub rank_ic: f64,
    /// Pearson correlation per day; `None` on skipped days.
    pub daily_ic: Vec<Option<f64>>,
    pub days_used: usize,
}

fn all_equal(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Pearson correlation, `None` for fewer than two points or a constant side.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || all_equal(x) || all_equal(y) {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[k]] {
            j += 1;
        }
        let avg = (k + j + 2) as f64 / 2.0;
        for &i in &idx[k..=j] {
            ranks[i] = avg;
        }
        k = j + 1;
    }
    ranks
}

fn check_shape(factor: &FactorMatrix, target: &TargetPanel) -> Result<(), MetricsError> {
    if factor.shape() != target.shape() {
        return Err(MetricsError::Shape {
            factor: factor.shape(),
            target: target.shape(),
        });
    }
    Ok(())
}

/// Finite (factor, target) pairs of one day.
fn day_pairs(factor: &FactorMatrix, target: &TargetPanel, d: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, _) = factor.shape();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = (factor.get(i, d), target.returns[(i, d)]);
        if x.is_finite() && y.is_finite() {
            xs.push(x);
            ys.push(y);
        }
    }
    (xs, ys)
}

fn mean_of(values: &[Option<f64>]) -> Option<(f64, usize)> {
    let used: Vec<f64> = values.iter().flatten().copied().collect();
    if used.is_empty() {
        None
    } else {
        Some((used.iter().sum::<f64>() / used.len() as f64, used.len()))
    }
}

/// Daily Pearson and Spearman correlations averaged over usable days.
pub fn ic(factor: &FactorMatrix, target: &TargetPanel) -> Result<ICReport, MetricsError> {
    check_shape(factor, target)?;
    let (_, t) = factor.shape();
    let mut daily = Vec::with_capacity(t);
    let mut daily_rank = Vec::with_capacity(t);
    for d in 0..t {
        let (xs, ys) = day_pairs(factor, target, d);
        let p = pearson(&xs, &ys);
        daily_rank.push(p.and_then(|_| pearson(&average_ranks(&xs), &average_ranks(&ys))));
        daily.push(p);
    }
    let (ic, days_used) = mean_of(&daily).ok_or(MetricsError::NoOverlap)?;
    let rank_ic = mean_of(&daily_rank).map_or(0.0, |(m, _)| m);
    Ok(ICReport {
        ic,
        rank_ic,
        daily_ic: daily,
        days_used,
    })
}

/// Mean daily Spearman correlation.
pub fn rank_ic(factor: &FactorMatrix, target: &TargetPanel) -> Result<f64, MetricsError> {
    check_shape(factor, target)?;
    let (_, t) = factor.shape();
    let daily: Vec<Option<f64>> = (0..t)
        .map(|d| {
            let (xs, ys) = day_pairs(factor, target, d);
            pearson(&average_ranks(&xs), &average_ranks(&ys))
        })
        .collect();
    mean_of(&daily).map(|(m, _)| m).ok_or(MetricsError::NoOverlap)
}

/// Day-wise z-score over valid stocks (population std). Days with fewer than
/// two valid stocks or zero dispersion become NaN.
pub fn zscore_daily(factor: &FactorMatrix) -> FactorMatrix {
    let (n, t) = factor.shape();
    let mut out = Array2::from_elem((n, t), f64::NAN);
    for d in 0..t {
        let col: Vec<(usize, f64)> = (0..n)
            .map(|i| (i, factor.get(i, d)))
            .filter(|(_, v)| v.is_finite())
            .collect();
        if col.len() < 2 || col.iter().all(|(_, v)| *v == col[0].1) {
            continue;
        }
        let m = col.iter().map(|(_, v)| v).sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|(_, v)| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            for (i, v) in col {
                out[(i, d)] = (v - m) / sd;
            }
        }
    }
    FactorMatrix::new(out)
}

/// Centered second moments of one day's rows valid in every factor and the target.
#[derive(Debug, Clone)]
struct DayMoments {
    /// Upper-triangular-complete k×k cross products, row major.
    sigma: Vec<f64>,
    cov: Vec<f64>,
    syy: f64,
}

/// Per-day sufficient statistics for the IC of any linear combination of a
/// fixed factor list, so IC and its gradient cost O(T·k²) per weight vector.
#[derive(Debug, Clone)]
pub struct CombinationMoments {
    k: usize,
    days: Vec<DayMoments>,
}

/// IC value and gradient at one weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct IcGradient {
    pub ic: f64,
    pub gradient: Vec<f64>,
    pub days_used: usize,
}

impl CombinationMoments {
    pub fn new(factors: &[&FactorMatrix], target: &TargetPanel) -> Result<Self, MetricsError> {
        let k = factors.len();
        let (n, t) = target.shape();
        for f in factors {
            check_shape(f, target)?;
        }
        let mut days = Vec::new();
        let mut rows: Vec<f64> = Vec::with_capacity(n * k);
        let mut ys: Vec<f64> = Vec::with_capacity(n);
        for d in 0..t {
            rows.clear();
            ys.clear();
            for i in 0..n {
                let y = target.returns[(i, d)];
                if !y.is_finite() || factors.iter().any(|f| !f.is_valid(i, d)) {
                    continue;
                }
                ys.push(y);
                rows.extend(factors.iter().map(|f| f.get(i, d)));
            }
            let m = ys.len();
            if m < 2 || all_equal(&ys) {
                continue;
            }
            let my = ys.iter().sum::<f64>() / m as f64;
            let mut means = vec![0.0; k];
            for r in 0..m {
                for j in 0..k {
                    means[j] += rows[r * k + j];
                }
            }
            means.iter_mut().for_each(|v| *v /= m as f64);
            let mut sigma = vec![0.0; k * k];
            let mut cov = vec![0.0; k];
            let mut syy = 0.0;
            let mut centered = vec![0.0; k];
            for r in 0..m {
                for j in 0..k {
                    centered[j] = rows[r * k + j] - means[j];
                }
                let dy = ys[r] - my;
                syy += dy * dy;
                for a in 0..k {
                    cov[a] += centered[a] * dy;
                    let ca = centered[a];
                    let row = &mut sigma[a * k..a * k + k];
                    for b in a..k {
                        row[b] += ca * centered[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    sigma[a * k + b] = sigma[b * k + a];
                }
            }
            if syy > 0.0 {
                days.push(DayMoments { sigma, cov, syy });
            }
        }
        Ok(CombinationMoments { k, days })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Days with at least two complete rows and a non-constant target.
    pub fn candidate_days(&self) -> usize {
        self.days.len()
    }

    /// Day-pooled factor covariance and target covariance, each day scaled
    /// so its factors have unit average variance and its target unit
    /// variance. Both are row major; the covariance is k×k.
    pub fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut sigma = vec![0.0; k * k];
        let mut cov = vec![0.0; k];
        for day in &self.days {
            let trace: f64 = (0..k).map(|j| day.sigma[j * k + j]).sum::<f64>() / k as f64;
            if !(trace > 0.0) {
                continue;
            }
            for (acc, v) in sigma.iter_mut().zip(&day.sigma) {
                *acc += v / trace;
            }
            let s = (trace * day.syy).sqrt();
            for (acc, v) in cov.iter_mut().zip(&day.cov) {
                *acc += v / s;
            }
        }
        (sigma, cov)
    }

    /// `(q, a, Σw)` of one day, `None` if the combination has no dispersion.
    fn day_terms(&self, day: &DayMoments, w: &[f64], sw: &mut [f64]) -> Option<(f64, f64)> {
        let k = self.k;
        let mut q = 0.0;
        let mut scale = 0.0;
        for a in 0..k {
            let row = &day.sigma[a * k..a * k + k];
            let s: f64 = row.iter().zip(w).map(|(x, y)| x * y).sum();
            sw[a] = s;
            q += w[a] * s;
            scale += w[a].abs() * row[a].sqrt();
        }
        // cancellation guard: a combination that is exactly constant leaves rounding residue
        if !(q > 1e-13 * scale * scale) {
            return None;
        }
        let a: f64 = day.cov.iter().zip(w).map(|(x, y)| x * y).sum();
        Some((q, a))
    }

    /// IC of `Σ w_j f_j`, `None` when no day is usable.
    pub fn ic(&self, w: &[f64]) -> Option<f64> {
        let mut sw = vec![0.0; self.k];
        let (mut total, mut used) = (0.0, 0usize);
        for day in &self.days {
            if let Some((q, a)) = self.day_terms(day, w, &mut sw) {
                total += (a / (q * day.syy).sqrt()).clamp(-1.0, 1.0);
                used += 1;
            }
        }
        (used > 0).then(|| total / used as f64)
    }

    /// IC and its analytic gradient with respect to `w`.
    pub fn ic_gradient(&self, w: &[f64]) -> Option<IcGradient> {
        let k = self.k;
        let mut sw = vec![0.0; k];
        let mut grad = vec![0.0; k];
        let (mut total, mut used) = (0.0, 0usize);
        for day in &self.days {
            let Some((q, a)) = self.day_terms(day, w, &mut sw) else {
                continue;
            };
            let denom = (q * day.syy).sqrt();
            total += a / denom;
            used += 1;
            let corr = a / (q * denom);
            for j in 0..k {
                grad[j] += day.cov[j] / denom - corr * sw[j];
            }
        }
        if used == 0 {
            return None;
        }
        grad.iter_mut().for_each(|g| *g /= used as f64);
        Some(IcGradient {
            ic: total / used as f64,
            gradient: grad,
            days_used: used,
        })
    }
}

/// Analytic `∂ IC(Σ w_j f_j) / ∂ w_j`.
pub fn ic_weight_gradient(
    factors: &[&FactorMatrix],
    weights: &[f64],
    target: &TargetPanel,
) -> Result<Vec<f64>, MetricsError> {
    if factors.len() != weights.len() || factors.is_empty() {
        return Err(MetricsError::Weights {
            expected: factors.len(),
            got: weights.len(),
        });
    }
    CombinationMoments::new(factors, target)?
        .ic_gradient(weights)
        .map(|g| g.gradient)
        .ok_or(MetricsError::NoOverlap)
}

/// Weighted sum `Σ w_j f_j`, NaN wherever any contributing factor is NaN.
pub fn weighted_sum(factors: &[&FactorMatrix], weights: &[f64]) -> FactorMatrix {
    assert_eq!(factors.len(), weights.len());
    assert!(!factors.is_empty());
    let mut out = Array2::zeros(factors[0].shape());
    for (f, w) in factors.iter().zip(weights) {
        out.zip_mut_with(f.values(), |acc, v| *acc += w * v);
    }
    FactorMatrix::new(out)
}
