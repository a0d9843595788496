//! The weighted alpha pool and its combined "mega alpha".
//!
//! Each entry caches its factor z-scored per day on the training view, with
//! missing values on listed stock-days set to the day's mean. Weights
//! are fitted by gradient ascent on the training IC of `Σ w_j z_j`; when the
//! pool overflows, the entry with the smallest `|w|` is evicted.

use std::sync::Arc;

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse, AlphaExpr, ParseError};
use crate::metrics::{ic, weighted_sum, zscore_daily, CombinationMoments, MetricsError};
use crate::ops::{evaluate_view, FactorMatrix};
use crate::panel::{PanelView, TargetPanel};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("pool capacity must be positive")]
    Capacity,
    #[error("pool is empty")]
    Empty,
    #[error("non-finite gradient at iteration {iteration}; weights left unchanged")]
    NonFinite { iteration: usize },
    #[error("invalid optimizer setting: {0}")]
    Settings(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("formula {formula:?}: {source}")]
    Formula { formula: String, source: ParseError },
    #[error("pool file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("pool file holds {entries} entries but capacity is {capacity}")]
    Overfull { entries: usize, capacity: usize },
}

/// Gradient-ascent settings for [`AlphaPool::optimize_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightOptConfig {
    /// Initial step length, in radians on the unit sphere of whitened weight directions.
    pub lr: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for WeightOptConfig {
    fn default() -> Self {
        WeightOptConfig {
            lr: 0.01,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

impl WeightOptConfig {
    pub fn validate(&self) -> Result<(), PoolError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PoolError::Settings(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.tol >= 0.0) {
            return Err(PoolError::Settings(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub expr: AlphaExpr,
    pub formula: String,
    pub weight: f64,
    factor: Arc<FactorMatrix>,
}

impl PoolEntry {
    /// Day-wise z-scored factor on the training view.
    pub fn factor(&self) -> &Arc<FactorMatrix> {
        &self.factor
    }
}

/// Result of one [`AlphaPool::optimize_weights`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub ic_before: f64,
    pub ic_after: f64,
    pub iterations: usize,
}

/// What happened to a candidate offered to the pool.
#[derive(Debug, Clone, PartialEq)]
pub enum AddOutcome {
    Added {
        delta_ic: f64,
        /// Formula evicted to respect capacity, possibly the candidate itself.
        evicted: Option<String>,
    },
    Duplicate,
    /// Evaluates to nothing usable on the training view.
    Degenerate,
}

impl AddOutcome {
    pub fn delta_ic(&self) -> f64 {
        match self {
            AddOutcome::Added { delta_ic, .. } => *delta_ic,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFileEntry {
    pub formula: String,
    pub weight: f64,
}

/// On-disk pool: formulas in the textual grammar plus weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolFile {
    pub capacity: usize,
    pub entries: Vec<PoolFileEntry>,
    pub train_ic: f64,
}

impl PoolFile {
    pub fn from_json(text: &str) -> Result<Self, PoolError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool file serializes")
    }

    pub fn exprs(&self) -> Result<Vec<AlphaExpr>, PoolError> {
        self.entries
            .iter()
            .map(|e| {
                parse(&e.formula).map_err(|source| PoolError::Formula {
                    formula: e.formula.clone(),
                    source,
                })
            })
            .collect()
    }

    /// Mega alpha of the stored formulas and weights on `view`.
    pub fn combine(&self, view: &PanelView<'_>) -> Result<FactorMatrix, PoolError> {
        if self.entries.is_empty() {
            return Err(PoolError::Empty);
        }
        let factors: Vec<FactorMatrix> = self.exprs()?.iter().map(|e| prepare_factor(e, view)).collect();
        let refs: Vec<&FactorMatrix> = factors.iter().collect();
        let weights: Vec<f64> = self.entries.iter().map(|e| e.weight).collect();
        Ok(weighted_sum(&refs, &weights))
    }
}

#[derive(Debug, Clone)]
pub struct AlphaPool {
    capacity: usize,
    entries: Vec<PoolEntry>,
    train_ic: f64,
    opt: WeightOptConfig,
}

/// Evaluates `expr` on `view` and z-scores it day by day.
///
/// On a listed (mask-true) stock-day where the factor has no value, the
/// z-score is set to 0, the cross-sectional mean. Without this, the NaN
/// intersection of many factors with different warm-up lengths can leave a
/// combination defined on only a handful of cells, where its IC is
/// meaningless. Unlisted cells stay NaN.
pub fn prepare_factor(expr: &AlphaExpr, view: &PanelView<'_>) -> FactorMatrix {
    let mut z = zscore_daily(&evaluate_view(expr, view)).into_values();
    let mask = view.panel.mask();
    for ((i, d), v) in z.indexed_iter_mut() {
        if v.is_nan() && mask[(i, view.days.start + d)] {
            *v = 0.0;
        }
    }
    FactorMatrix::new(z)
}

fn normalize(w: &mut [f64]) -> bool {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        w.iter_mut().for_each(|v| *v /= norm);
        true
    } else {
        false
    }
}

/// Change of variables `w = L⁻ᵀ v`, where `L Lᵀ` is the pooled factor
/// covariance plus a small ridge. Falls back to the identity when the
/// factorization fails.
struct Whitening {
    l: Option<DMatrix<f64>>,
}

impl Whitening {
    fn new(sigma: &[f64], k: usize) -> Self {
        let mut m = DMatrix::from_row_slice(k, k, sigma);
        let ridge = 1e-8 * m.trace().abs().max(f64::MIN_POSITIVE) / k as f64;
        for j in 0..k {
            m[(j, j)] += ridge;
        }
        let l = if m.iter().all(|v| v.is_finite()) {
            Cholesky::new(m).map(|c| c.l())
        } else {
            None
        };
        Whitening { l }
    }

    fn to_w(&self, v: &[f64]) -> Vec<f64> {
        match &self.l {
            Some(l) => l
                .tr_solve_lower_triangular(&DVector::from_column_slice(v))
                .map_or_else(|| v.to_vec(), |x| x.as_slice().to_vec()),
            None => v.to_vec(),
        }
    }

    fn to_v(&self, w: &[f64]) -> Vec<f64> {
        match &self.l {
            Some(l) => l.tr_mul(&DVector::from_column_slice(w)).as_slice().to_vec(),
            None => w.to_vec(),
        }
    }

    /// `∂/∂v` from `∂/∂w`.
    fn grad_v(&self, g: &[f64]) -> Vec<f64> {
        match &self.l {
            Some(l) => l
                .solve_lower_triangular(&DVector::from_column_slice(g))
                .map_or_else(|| g.to_vec(), |x| x.as_slice().to_vec()),
            None => g.to_vec(),
        }
    }
}

impl AlphaPool {
    pub fn new(capacity: usize) -> Result<Self, PoolError> {
        Self::with_optimizer(capacity, WeightOptConfig::default())
    }

    pub fn with_optimizer(capacity: usize, opt: WeightOptConfig) -> Result<Self, PoolError> {
        if capacity == 0 {
            return Err(PoolError::Capacity);
        }
        opt.validate()?;
        Ok(AlphaPool {
            capacity,
            entries: Vec::new(),
            train_ic: 0.0,
            opt,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    /// Combined training IC; 0 for an empty pool.
    pub fn train_ic(&self) -> f64 {
        self.train_ic
    }

    pub fn optimizer(&self) -> WeightOptConfig {
        self.opt
    }

    pub fn contains(&self, formula: &str) -> bool {
        self.entries.iter().any(|e| e.formula == formula)
    }

    fn moments(&self, target: &TargetPanel) -> Result<CombinationMoments, PoolError> {
        let factors: Vec<&FactorMatrix> = self.entries.iter().map(|e| e.factor.as_ref()).collect();
        Ok(CombinationMoments::new(&factors, target)?)
    }

    /// Recomputes the training IC at the current weights.
    pub fn refresh_ic(&mut self, target: &TargetPanel) -> Result<f64, PoolError> {
        self.train_ic = if self.entries.is_empty() {
            0.0
        } else {
            self.moments(target)?.ic(&self.weights()).unwrap_or(0.0)
        };
        Ok(self.train_ic)
    }

    /// Mega alpha on the training view from the cached factors.
    pub fn combine_cached(&self) -> Result<FactorMatrix, PoolError> {
        if self.entries.is_empty() {
            return Err(PoolError::Empty);
        }
        let factors: Vec<&FactorMatrix> = self.entries.iter().map(|e| e.factor.as_ref()).collect();
        Ok(weighted_sum(&factors, &self.weights()))
    }

    /// Mega alpha `Σ w_j zscore(f_j)` evaluated on `view`.
    pub fn combine(&self, view: &PanelView<'_>) -> Result<FactorMatrix, PoolError> {
        if self.entries.is_empty() {
            return Err(PoolError::Empty);
        }
        let factors: Vec<FactorMatrix> = self.entries.iter().map(|e| prepare_factor(&e.expr, view)).collect();
        let refs: Vec<&FactorMatrix> = factors.iter().collect();
        Ok(weighted_sum(&refs, &self.weights()))
    }

    /// Gradient ascent of training IC over weight directions, in coordinates
    /// whitened by the day-pooled factor covariance, with an adaptive step
    /// and a closed-form warm start. Weights end with unit L2 norm.
    pub fn optimize_weights(&mut self, target: &TargetPanel) -> Result<OptimizeReport, PoolError> {
        let opt = self.opt;
        self.optimize_weights_with(target, opt)
    }

    pub fn optimize_weights_with(
        &mut self,
        target: &TargetPanel,
        opt: WeightOptConfig,
    ) -> Result<OptimizeReport, PoolError> {
        opt.validate()?;
        if self.entries.is_empty() {
            return Err(PoolError::Empty);
        }
        let moments = self.moments(target)?;
        let (pooled_sigma, pooled_cov) = moments.pooled();
        let white = Whitening::new(&pooled_sigma, self.entries.len());
        let mut w = self.weights();
        if !normalize(&mut w) {
            w = vec![1.0 / (w.len() as f64).sqrt(); w.len()];
        }
        let start = moments.ic_gradient(&w);
        let ic_before = start.as_ref().map_or(0.0, |g| g.ic);
        let mut current = start;
        // the maximizer when every day shares the pooled covariance
        let mut w0 = white.to_w(&white.grad_v(&pooled_cov));
        if normalize(&mut w0) {
            if let Some(g0) = moments.ic_gradient(&w0) {
                if current.as_ref().map_or(true, |c| g0.ic > c.ic) {
                    w = w0;
                    current = Some(g0);
                }
            }
        }
        let Some(mut current) = current else {
            self.train_ic = 0.0;
            return Ok(OptimizeReport {
                ic_before: 0.0,
                ic_after: 0.0,
                iterations: 0,
            });
        };
        let mut v = white.to_v(&w);
        normalize(&mut v);
        let mut step = opt.lr;
        let mut iterations = 0;
        while iterations < opt.max_iters {
            iterations += 1;
            if current.gradient.iter().any(|g| !g.is_finite()) {
                return Err(PoolError::NonFinite { iteration: iterations });
            }
            // IC is scale-free in v as well, so this gradient is tangent to the sphere
            let g = white.grad_v(&current.gradient);
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(gnorm >= 1e-12) {
                break;
            }
            let mut accepted = None;
            while step > 1e-12 {
                let mut cand_v: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi + step * gi / gnorm).collect();
                let mut cand_w = white.to_w(&cand_v);
                if !normalize(&mut cand_v) || !normalize(&mut cand_w) {
                    step /= 2.0;
                    continue;
                }
                match moments.ic_gradient(&cand_w) {
                    Some(next) if next.ic > current.ic => {
                        accepted = Some((cand_v, cand_w, next));
                        break;
                    }
                    _ => step /= 2.0,
                }
            }
            let Some((cand_v, cand_w, next)) = accepted else {
                break;
            };
            let gain = next.ic - current.ic;
            v = cand_v;
            w = cand_w;
            current = next;
            step = (step * 2.0).min(1.0);
            if gain < opt.tol {
                break;
            }
        }
        for (e, wi) in self.entries.iter_mut().zip(&w) {
            e.weight = *wi;
        }
        self.train_ic = current.ic;
        Ok(OptimizeReport {
            ic_before,
            ic_after: current.ic,
            iterations,
        })
    }

    /// Offers an expression already evaluated and z-scored on the training view.
    pub fn add_prepared(
        &mut self,
        expr: AlphaExpr,
        factor: Arc<FactorMatrix>,
        target: &TargetPanel,
    ) -> Result<AddOutcome, PoolError> {
        let formula = expr.print();
        if self.contains(&formula) {
            return Ok(AddOutcome::Duplicate);
        }
        let single = match ic(&factor, target) {
            Ok(report) if report.ic != 0.0 => report.ic,
            Ok(_) | Err(MetricsError::NoOverlap) => return Ok(AddOutcome::Degenerate),
            Err(e) => return Err(e.into()),
        };
        let before = self.train_ic;
        let snapshot = self.entries.clone();
        let scale = self.entries.iter().map(|e| e.weight * e.weight).sum::<f64>().sqrt();
        let initial = 0.01 * single.signum() * if scale > 0.0 { scale } else { 1.0 };
        self.entries.push(PoolEntry {
            expr,
            formula,
            weight: initial,
            factor,
        });
        if let Err(e) = self.optimize_weights(target) {
            self.entries = snapshot;
            self.train_ic = before;
            return Err(e);
        }
        let mut evicted = None;
        if self.entries.len() > self.capacity {
            let (idx, _) = self
                .entries
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (i, e)| {
                    if e.weight.abs() < best.1 {
                        (i, e.weight.abs())
                    } else {
                        best
                    }
                });
            evicted = Some(self.entries.remove(idx).formula);
            if let Err(e) = self.optimize_weights(target) {
                self.entries = snapshot;
                self.train_ic = before;
                return Err(e);
            }
        }
        Ok(AddOutcome::Added {
            delta_ic: self.train_ic - before,
            evicted,
        })
    }

    /// Evaluates `expr` on the training view, z-scores it and offers it to the pool.
    pub fn add_factor(
        &mut self,
        expr: AlphaExpr,
        view: &PanelView<'_>,
        target: &TargetPanel,
    ) -> Result<AddOutcome, PoolError> {
        if self.contains(&expr.print()) {
            return Ok(AddOutcome::Duplicate);
        }
        let factor = Arc::new(prepare_factor(&expr, view));
        self.add_prepared(expr, factor, target)
    }

    /// Adds seeds in order; degenerate or duplicate seeds are skipped with a warning.
    pub fn seed(
        &mut self,
        exprs: &[AlphaExpr],
        view: &PanelView<'_>,
        target: &TargetPanel,
    ) -> Result<Vec<AddOutcome>, PoolError> {
        let mut outcomes = Vec::with_capacity(exprs.len());
        for expr in exprs {
            let outcome = self.add_factor(expr.clone(), view, target)?;
            match &outcome {
                AddOutcome::Degenerate => warn!("seed {expr} is degenerate on the training range; skipped"),
                AddOutcome::Duplicate => warn!("seed {expr} duplicates a pool entry; skipped"),
                AddOutcome::Added { .. } => {}
            }
            outcomes.push(outcome);
        }
        Ok(outcomes)
    }

    pub fn to_file(&self) -> PoolFile {
        PoolFile {
            capacity: self.capacity,
            entries: self
                .entries
                .iter()
                .map(|e| PoolFileEntry {
                    formula: e.formula.clone(),
                    weight: e.weight,
                })
                .collect(),
            train_ic: self.train_ic,
        }
    }

    /// Rebuilds a pool from its file form, recomputing caches and training IC
    /// at the stored weights.
    pub fn from_file(
        file: &PoolFile,
        view: &PanelView<'_>,
        target: &TargetPanel,
        opt: WeightOptConfig,
    ) -> Result<Self, PoolError> {
        let mut pool = AlphaPool::with_optimizer(file.capacity, opt)?;
        if file.entries.len() > file.capacity {
            return Err(PoolError::Overfull {
                entries: file.entries.len(),
                capacity: file.capacity,
            });
        }
        for (expr, entry) in file.exprs()?.into_iter().zip(&file.entries) {
            pool.entries.push(PoolEntry {
                factor: Arc::new(prepare_factor(&expr, view)),
                formula: expr.print(),
                expr,
                weight: entry.weight,
            });
        }
        pool.refresh_ic(target)?;
        Ok(pool)
    }
}
