//! Synthetic panels with a planted signal.
//!
//! Prices follow independent geometric random walks. Targets are not derived
//! from future prices; they are a noisy linear function of the day-wise
//! z-scored `Delta(close, window)`: `y[i, d] = a · z[i, d] + b · ε[i, d]`,
//! so the planted formula has an expected daily IC of `a / sqrt(a² + b²)`.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsl::{parse, AlphaExpr};
use crate::metrics::zscore_daily;
use crate::ops::evaluate;
use crate::panel::{FeaturePanel, Split, TargetPanel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub stocks: usize,
    pub days: usize,
    /// Window of the planted `Delta(close, window)`.
    pub window: usize,
    /// Expected daily IC of the planted formula, in (0, 1].
    pub planted_ic: f64,
    /// Signal loading `a` of the target model.
    pub signal_scale: f64,
    /// Daily log-return volatility of the price walks.
    pub volatility: f64,
    /// Log-scale dispersion of starting price levels across stocks.
    pub level_dispersion: f64,
    pub train_days: usize,
    pub valid_days: usize,
    /// Probability that a (stock, day) cell is masked as not traded.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            stocks: 50,
            days: 400,
            window: 5,
            planted_ic: 0.6,
            signal_scale: 0.02,
            volatility: 0.02,
            level_dispersion: 1.0,
            train_days: 280,
            valid_days: 60,
            missing_rate: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub panel: FeaturePanel,
    pub target: TargetPanel,
    pub split: Split,
    pub planted: AlphaExpr,
}

/// Weekdays starting at `start` (inclusive when it is a weekday).
pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Builds a planted-signal panel, its targets and a train/valid/test split.
pub fn planted_panel(cfg: &PlantedConfig) -> PlantedData {
    assert!(cfg.stocks >= 2 && cfg.window >= 1 && cfg.days > cfg.window);
    assert!(cfg.planted_ic > 0.0 && cfg.planted_ic <= 1.0);
    let (n, t) = (cfg.stocks, cfg.days);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.signal_scale;
    let b = a * (1.0 / (cfg.planted_ic * cfg.planted_ic) - 1.0).sqrt();

    let mut close = Array2::<f64>::zeros((n, t));
    for i in 0..n {
        close[(i, 0)] = 100.0 * (cfg.level_dispersion * normal(&mut rng)).exp();
        for d in 1..t {
            close[(i, d)] = close[(i, d - 1)] * (cfg.volatility * normal(&mut rng)).exp();
        }
    }
    let mut open = Array2::zeros((n, t));
    let mut high = Array2::zeros((n, t));
    let mut low = Array2::zeros((n, t));
    let mut vwap = Array2::zeros((n, t));
    let mut volume = Array2::zeros((n, t));
    let mut mask = Array2::from_elem((n, t), true);
    for i in 0..n {
        for d in 0..t {
            let c = close[(i, d)];
            let o = c * (1.0 + 0.005 * normal(&mut rng));
            let hi = o.max(c) * (1.0 + (0.005 * normal(&mut rng)).abs());
            let lo = o.min(c) * (1.0 - (0.005 * normal(&mut rng)).abs());
            open[(i, d)] = o;
            high[(i, d)] = hi;
            low[(i, d)] = lo;
            vwap[(i, d)] = (hi + lo + c) / 3.0;
            volume[(i, d)] = (13.0 + 0.5 * normal(&mut rng)).exp().round();
            if cfg.missing_rate > 0.0 && rng.gen::<f64>() < cfg.missing_rate {
                mask[(i, d)] = false;
            }
        }
    }

    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let dates = business_days(start, t);
    let tickers = (0..n).map(|i| format!("S{i:03}")).collect();
    let panel = FeaturePanel::new(vec![open, close, high, low, volume, vwap], mask, dates, tickers)
        .expect("synthetic panel is well formed");
    let planted = parse(&format!("Delta(close, {})", cfg.window)).expect("planted formula parses");
    let z = zscore_daily(&evaluate(&planted, &panel));
    let returns = Array2::from_shape_fn((n, t), |(i, d)| {
        let noise = normal(&mut rng);
        let v = z.get(i, d);
        if v.is_finite() {
            a * v + b * noise
        } else {
            f64::NAN
        }
    });
    let target = TargetPanel { returns, horizon: 20 };
    let train_end = cfg.train_days.min(t);
    let valid_end = (train_end + cfg.valid_days).min(t);
    PlantedData {
        panel,
        target,
        split: Split {
            train: 0..train_end,
            valid: train_end..valid_end,
            test: valid_end..t,
        },
        planted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ic;

    #[test]
    fn planted_formula_has_expected_ic() {
        let data = planted_panel(&PlantedConfig::default());
        let f = evaluate(&data.planted, &data.panel);
        let r = ic(&f, &data.target).unwrap();
        assert!((r.ic - 0.6).abs() < 0.05, "ic {}", r.ic);
    }

    #[test]
    fn deterministic_and_weekdays() {
        let cfg = PlantedConfig {
            stocks: 5,
            days: 40,
            ..PlantedConfig::default()
        };
        let a = planted_panel(&cfg);
        let b = planted_panel(&cfg);
        assert_eq!(a.panel, b.panel);
        assert!(a.panel.dates().iter().all(|d| d.weekday().number_from_monday() <= 5));
    }
}
