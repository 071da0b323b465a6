//! Error-rate-controlled choice of the R̄² threshold and the resulting
//! block indicator matrix.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::BlockGrid;
use crate::error::{Error, Result};

/// Amount subtracted from the chosen grid value so that the block attaining
/// it survives the strict `r2bar > c` rule.
pub const THRESHOLD_BACKOFF: f64 = 1e-12;

/// K×J binary block indicator with the threshold that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorMatrix {
    pub delta: Array2<bool>,
    /// R̄² threshold; `None` when the indicator was read off a coefficient matrix.
    pub c_hat: Option<f64>,
    pub alpha: Option<f64>,
    /// Selected blocks `(k, j)` in row-major order.
    pub active: Vec<(usize, usize)>,
}

impl IndicatorMatrix {
    pub fn from_delta(delta: Array2<bool>, c_hat: Option<f64>, alpha: Option<f64>) -> Self {
        let active = delta
            .indexed_iter()
            .filter(|(_, &d)| d)
            .map(|(idx, _)| idx)
            .collect();
        IndicatorMatrix {
            delta,
            c_hat,
            alpha,
            active,
        }
    }

    pub fn gamma_hat(&self) -> Option<f64> {
        self.c_hat.map(|c| 1.0 - c)
    }

    pub fn num_selected(&self) -> usize {
        self.active.len()
    }

    pub fn is_selected(&self, k: usize, j: usize) -> bool {
        self.delta[[k, j]]
    }
}

/// Upper bound on the error rate at threshold `c`:
/// `|{R̄² < 2c/(c−1)}| / |{R̄² > c}|`, or `+∞` with an empty denominator.
pub fn er_bound(r2bar: &[f64], c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(format!("threshold must lie in (0, 1), got {c}")));
    }
    let low = 2.0 * c / (c - 1.0);
    let num = r2bar.iter().filter(|&&v| v < low).count();
    let den = r2bar.iter().filter(|&&v| v > c).count();
    Ok(if den == 0 {
        f64::INFINITY
    } else {
        num as f64 / den as f64
    })
}

/// Outcome of the ascending threshold scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    /// First grid value in (0, 1) whose error-rate bound is within alpha.
    pub feasible: Option<f64>,
    /// Threshold actually applied: `feasible − THRESHOLD_BACKOFF`, or 1 when
    /// nothing qualified (empty selection).
    pub c_hat: f64,
}

/// Scans the ascending R̄² values inside (0, 1) and stops at the first one
/// whose error-rate bound is at most `alpha`.
pub fn choose_threshold(r2bar: &[f64], alpha: f64) -> Result<ThresholdChoice> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if r2bar.is_empty() {
        return Err(Error::Config("threshold search needs at least one block".into()));
    }
    if r2bar.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("R̄² grid contains NaN".into()));
    }
    let mut sorted = r2bar.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len();

    let mut prev = f64::NAN;
    for &c in sorted.iter().filter(|&&v| v > 0.0 && v < 1.0) {
        if c == prev {
            continue;
        }
        prev = c;
        let low = 2.0 * c / (c - 1.0);
        let num = sorted.partition_point(|&v| v < low);
        let den = total - sorted.partition_point(|&v| v <= c);
        if den > 0 && (num as f64) <= alpha * den as f64 {
            return Ok(ThresholdChoice {
                feasible: Some(c),
                c_hat: c - THRESHOLD_BACKOFF,
            });
        }
    }
    Ok(ThresholdChoice {
        feasible: None,
        c_hat: 1.0,
    })
}

fn indicator_at(grid: &BlockGrid, c: f64, alpha: Option<f64>) -> IndicatorMatrix {
    let delta = Array2::from_shape_fn(grid.shape(), |(k, j)| grid.get(k, j).r2bar > c);
    IndicatorMatrix::from_delta(delta, Some(c), alpha)
}

/// Non-zero block selection at error-rate level `alpha`.
pub fn select_threshold(grid: &BlockGrid, alpha: f64) -> Result<IndicatorMatrix> {
    let choice = choose_threshold(&grid.r2bar_values(), alpha)?;
    if choice.feasible.is_none() {
        log::warn!("no block passed ER <= {alpha}; selection is empty");
    }
    Ok(indicator_at(grid, choice.c_hat, Some(alpha)))
}

/// Indicator for a fixed tuning parameter: block selected iff R̄² > 1 − gamma.
pub fn indicator_from_gamma(grid: &BlockGrid, gamma: f64) -> Result<IndicatorMatrix> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    Ok(indicator_at(grid, 1.0 - gamma, None))
}

/// Aggregate indicator objective
/// `Q(Δ) = (1/KJ) Σ [rss/(n−p−1)·Δ + γ·fit/(p−1)·(1−Δ)]` for a given Δ.
pub fn indicator_objective(grid: &BlockGrid, delta: &Array2<bool>, gamma: f64) -> f64 {
    let (k, j) = grid.shape();
    let total: f64 = grid
        .cells()
        .iter()
        .map(|s| {
            if delta[[s.k, s.j]] {
                s.rss / s.rss_dof()
            } else {
                gamma * s.fit / s.fit_dof()
            }
        })
        .sum();
    total / (k * j) as f64
}
