//! Per-block projection statistics and non-zero block selection.
//!
//! For covariate group `X_k` and response group `Y_j` with projector `P`
//! onto span(X_k) (or onto a lasso-screened subset of its columns):
//!
//! ```text
//! l_kj  = [‖Y_j − P Y_j‖² / (n − p − 1)] / [‖P Y_j‖² / max(p − 1, 1)]
//! R̄²_kj = 1 − l_kj
//! ```
//!
//! Small `l` (large R̄²) signals a relevant block.

mod groups;
mod threshold;

pub use groups::GroupSpec;
pub use threshold::{
    choose_threshold, er_bound, indicator_from_gamma, indicator_objective, select_threshold,
    IndicatorMatrix, ThresholdChoice, THRESHOLD_BACKOFF,
};

use ndarray::{s, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{projection_energy, select_columns, thin_qr, QrFactor, DEFAULT_RANK_TOL};
use crate::solver::{cv_lasso, derive_seed, lasso_cd, PathConfig, PenaltySpec};

/// Relative size below which the fitted energy counts as zero.
const ZERO_FIT_REL: f64 = 1e-20;

/// When a block's covariates are replaced by a lasso-screened subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenMode {
    /// Screen exactly when `p_k > n − 3`.
    Auto,
    Always,
    /// Never screen; blocks with `p_k > n − 3` are a configuration error.
    Never,
}

/// Penalty level of the per-column screening lasso.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenLambda {
    /// `λ = σ̂·Φ⁻¹(1 − level/(2·p_k·q_j))/√n` with `σ̂² = ‖y‖²/n`: under a
    /// pure-noise column, any spurious pick happens with probability about `level`.
    Bonferroni { level: f64 },
    CrossValidation { folds: usize, seed: u64 },
    Fixed { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenPolicy {
    pub mode: ScreenMode,
    pub lambda: ScreenLambda,
}

impl Default for ScreenPolicy {
    fn default() -> Self {
        ScreenPolicy {
            mode: ScreenMode::Auto,
            lambda: ScreenLambda::Bonferroni { level: 0.05 },
        }
    }
}

impl ScreenPolicy {
    fn screens(&self, p: usize, n: usize) -> Result<bool> {
        let too_wide = p + 3 > n;
        match self.mode {
            ScreenMode::Auto => Ok(too_wide),
            ScreenMode::Always => Ok(true),
            ScreenMode::Never if too_wide => Err(Error::Config(format!(
                "block with {p} covariates and {n} rows needs screening (p > n - 3)"
            ))),
            ScreenMode::Never => Ok(false),
        }
    }
}

/// Projection statistics of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub k: usize,
    pub j: usize,
    pub n: usize,
    /// Dimension of the projection space: rank of `X_k`, or of its screened subset.
    pub effective_p: usize,
    pub rss: f64,
    pub fit: f64,
    pub l: f64,
    pub r2bar: f64,
    /// Column indices within the group kept by screening, when screening ran.
    pub screened_support: Option<Vec<usize>>,
}

impl BlockStats {
    fn from_energies(n: usize, effective_p: usize, fit: f64, rss: f64, support: Option<Vec<usize>>) -> Result<Self> {
        if n < effective_p + 2 {
            return Err(Error::Config(format!(
                "residual degrees of freedom n - p - 1 = {} < 1 (n = {n}, p = {effective_p})",
                n as i64 - effective_p as i64 - 1
            )));
        }
        let mut stats = BlockStats {
            k: 0,
            j: 0,
            n,
            effective_p,
            rss,
            fit,
            l: f64::INFINITY,
            r2bar: f64::NEG_INFINITY,
            screened_support: support,
        };
        if effective_p > 0 && fit > ZERO_FIT_REL * (fit + rss) {
            stats.l = (rss / stats.rss_dof()) / (fit / stats.fit_dof());
            stats.r2bar = 1.0 - stats.l;
        }
        Ok(stats)
    }

    /// `n − p − 1`.
    pub fn rss_dof(&self) -> f64 {
        (self.n - self.effective_p - 1) as f64
    }

    /// `max(p − 1, 1)`, keeping single-column blocks well defined.
    pub fn fit_dof(&self) -> f64 {
        (self.effective_p.max(2) - 1) as f64
    }
}

/// K×J grid of block statistics, row-major in `(k, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGrid {
    num_k: usize,
    num_j: usize,
    cells: Vec<BlockStats>,
}

impl BlockGrid {
    /// Grid from row-major cells; each cell's `(k, j)` must match its position.
    pub fn from_cells(num_k: usize, num_j: usize, cells: Vec<BlockStats>) -> Result<Self> {
        if cells.len() != num_k * num_j {
            return Err(Error::Dimension(format!(
                "{} cells for a {num_k}x{num_j} grid",
                cells.len()
            )));
        }
        if let Some((i, c)) = cells.iter().enumerate().find(|(i, c)| (c.k, c.j) != (i / num_j, i % num_j)) {
            return Err(Error::Dimension(format!(
                "cell {i} is labelled ({}, {}), expected ({}, {})",
                c.k,
                c.j,
                i / num_j,
                i % num_j
            )));
        }
        Ok(BlockGrid { num_k, num_j, cells })
    }

    /// 1×1 grid holding one block.
    pub fn single(stats: BlockStats) -> Self {
        BlockGrid {
            num_k: 1,
            num_j: 1,
            cells: vec![stats],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_k, self.num_j)
    }

    pub fn get(&self, k: usize, j: usize) -> &BlockStats {
        &self.cells[k * self.num_j + j]
    }

    pub fn cells(&self) -> &[BlockStats] {
        &self.cells
    }

    pub fn r2bar_values(&self) -> Vec<f64> {
        self.cells.iter().map(|s| s.r2bar).collect()
    }

    pub fn r2bar_matrix(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn(self.shape(), |(k, j)| self.get(k, j).r2bar)
    }
}

/// Builds block statistics from precomputed fitted and residual energies.
pub fn block_stats_from_energies(
    n: usize,
    effective_p: usize,
    fit: f64,
    rss: f64,
    support: Option<Vec<usize>>,
) -> Result<BlockStats> {
    BlockStats::from_energies(n, effective_p, fit, rss, support)
}

fn check_block_shapes(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<usize> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Dimension(format!(
            "covariate block has {n} rows, response block has {}",
            y.nrows()
        )));
    }
    if n < 4 {
        return Err(Error::Dimension(format!("block statistics need n >= 4, got {n}")));
    }
    Ok(n)
}

fn stats_from_factor(f: &QrFactor, y: ArrayView2<'_, f64>, support: Option<Vec<usize>>) -> Result<BlockStats> {
    let (fit, rss) = projection_energy(f, y)?;
    BlockStats::from_energies(y.nrows(), f.rank(), fit, rss, support)
}

fn bonferroni_lambda(y: &[f64], level: f64, p: usize, q: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("screening level must lie in (0, 1), got {level}")));
    }
    let n = y.len() as f64;
    let sigma = (y.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let tail = level / (2.0 * (p * q) as f64);
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - tail);
    Ok(sigma * z / n.sqrt())
}

/// Lasso screening of a block's covariates: per-response-column supports,
/// unioned, then truncated to the `cap` columns with the largest maximum
/// absolute coefficient. Returned indices are sorted.
pub fn screen_support(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    lambda: &ScreenLambda,
    cap: usize,
) -> Result<Vec<usize>> {
    let (p, q) = (x.ncols(), y.ncols());
    let mut score = vec![0.0_f64; p];
    for c in 0..q {
        let yc = y.column(c);
        let coefs = match *lambda {
            ScreenLambda::Bonferroni { level } => {
                let lam = bonferroni_lambda(&yc.to_vec(), level, p, q)?;
                lasso_cd(x, yc, &PenaltySpec::lasso(lam), None)?.coefficients
            }
            ScreenLambda::Fixed { lambda } => lasso_cd(x, yc, &PenaltySpec::lasso(lambda), None)?.coefficients,
            ScreenLambda::CrossValidation { folds, seed } => {
                cv_lasso(x, yc, folds, &PenaltySpec::default(), derive_seed(seed, c as u64), &PathConfig::default())?
                    .fit
                    .coefficients
            }
        };
        for (s, b) in score.iter_mut().zip(&coefs) {
            *s = s.max(b.abs());
        }
    }
    let mut support: Vec<usize> = (0..p).filter(|&i| score[i] > 0.0).collect();
    if support.len() > cap {
        support.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
        support.truncate(cap);
        support.sort_unstable();
    }
    Ok(support)
}

fn screened_stats(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, policy: &ScreenPolicy) -> Result<BlockStats> {
    let n = x.nrows();
    let cap = (n - 3).min(x.ncols());
    let support = screen_support(x, y, &policy.lambda, cap)?;
    let sub = select_columns(x, &support);
    let f = thin_qr(sub.view(), DEFAULT_RANK_TOL);
    stats_from_factor(&f, y, Some(support))
}

fn factor_block(x: ArrayView2<'_, f64>) -> QrFactor {
    let f = thin_qr(x, DEFAULT_RANK_TOL);
    if f.is_rank_deficient() {
        log::warn!(
            "covariate block has rank {} < {} columns; dropping collinear columns",
            f.rank(),
            f.n_cols()
        );
    }
    f
}

/// Statistics of a single block `(X_k, Y_j)`. Returned indices `k`, `j` are 0.
pub fn block_stats(x_k: ArrayView2<'_, f64>, y_j: ArrayView2<'_, f64>, policy: &ScreenPolicy) -> Result<BlockStats> {
    let n = check_block_shapes(&x_k, &y_j)?;
    if policy.screens(x_k.ncols(), n)? {
        screened_stats(x_k, y_j, policy)
    } else {
        stats_from_factor(&factor_block(x_k), y_j, None)
    }
}

/// Statistics for every block. Unscreened covariate groups are factored once
/// and shared across response groups; screened ones get a support per block.
pub fn all_block_stats(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    groups: &GroupSpec,
    policy: &ScreenPolicy,
) -> Result<BlockGrid> {
    groups.check_dims(x.ncols(), y.ncols())?;
    let n = check_block_shapes(&x, &y)?;
    let (num_k, num_j) = (groups.num_covariate_groups(), groups.num_response_groups());

    let rows: Vec<Result<Vec<BlockStats>>> = (0..num_k)
        .into_par_iter()
        .map(|k| {
            let xr = groups.covariate_range(k);
            let x_k = x.slice(s![.., xr]);
            let screened = policy.screens(x_k.ncols(), n)?;
            let factor = (!screened).then(|| factor_block(x_k));
            (0..num_j)
                .into_par_iter()
                .map(|j| {
                    let y_j = y.slice(s![.., groups.response_range(j)]);
                    let mut stats = match &factor {
                        Some(f) => stats_from_factor(f, y_j, None)?,
                        None => screened_stats(x_k, y_j, policy)?,
                    };
                    stats.k = k;
                    stats.j = j;
                    Ok(stats)
                })
                .collect()
        })
        .collect();

    let mut cells = Vec::with_capacity(num_k * num_j);
    for row in rows {
        cells.extend(row?);
    }
    Ok(BlockGrid { num_k, num_j, cells })
}

#[cfg(test)]
pub(crate) fn grid_from_r2bar(values: &ndarray::Array2<f64>) -> BlockGrid {
    let (num_k, num_j) = values.dim();
    let cells = values
        .indexed_iter()
        .map(|((k, j), &r)| BlockStats {
            k,
            j,
            n: 100,
            effective_p: 5,
            rss: 1.0,
            fit: 1.0,
            l: 1.0 - r,
            r2bar: r,
            screened_support: None,
        })
        .collect();
    BlockGrid { num_k, num_j, cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_sq, standardize, Matrix};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn noise_free_block_has_zero_l() {
        let x = normal(20, 3, 1);
        let y = x.dot(&normal(3, 2, 2));
        let s = block_stats(x.view(), y.view(), &ScreenPolicy::default()).unwrap();
        assert!(s.rss < 1e-20 * s.fit);
        assert!(s.l < 1e-12);
        assert!((s.r2bar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_response_gives_sentinel() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let y = array![[0.0], [0.0], [1.0], [2.0], [-1.0]];
        let s = block_stats(x.view(), y.view(), &ScreenPolicy::default()).unwrap();
        assert_eq!(s.fit, 0.0);
        assert_eq!(s.l, f64::INFINITY);
        assert_eq!(s.r2bar, f64::NEG_INFINITY);
    }

    #[test]
    fn l_matches_dense_projector_oracle() {
        let x = normal(10, 3, 3);
        let y = normal(10, 2, 4);
        let s = block_stats(x.view(), y.view(), &ScreenPolicy::default()).unwrap();
        // Dense projector through the normal equations, P = X (XᵀX)⁻¹ Xᵀ.
        let xn = nalgebra::DMatrix::from_fn(10, 3, |r, c| x[[r, c]]);
        let yn = nalgebra::DMatrix::from_fn(10, 2, |r, c| y[[r, c]]);
        let proj = &xn * (xn.transpose() * &xn).try_inverse().unwrap() * xn.transpose();
        let fitted = &proj * &yn;
        let fit = fitted.norm_squared();
        let rss = (&yn - &fitted).norm_squared();
        let oracle = rss / (10.0 - 3.0 - 1.0) * (3.0 - 1.0) / fit;
        assert!((s.l - oracle).abs() < 1e-10 * oracle.max(1.0));
        assert!((s.rss + s.fit - frobenius_sq(y.view())).abs() < 1e-8 * frobenius_sq(y.view()));
    }

    #[test]
    fn single_column_block_uses_unit_fit_dof() {
        let x = normal(12, 1, 5);
        let y = &x * 2.0 + &normal(12, 1, 6);
        let s = block_stats(x.view(), y.view(), &ScreenPolicy::default()).unwrap();
        assert_eq!(s.fit_dof(), 1.0);
        assert!((s.l - (s.rss / 10.0) / s.fit).abs() < 1e-14);
    }

    #[test]
    fn never_screening_wide_block_is_config_error() {
        let x = normal(8, 6, 7);
        let y = normal(8, 1, 8);
        let policy = ScreenPolicy {
            mode: ScreenMode::Never,
            ..Default::default()
        };
        assert!(matches!(block_stats(x.view(), y.view(), &policy), Err(Error::Config(_))));
        assert!(matches!(
            block_stats(normal(3, 1, 0).view(), normal(3, 1, 1).view(), &ScreenPolicy::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn wide_block_is_screened_within_cap() {
        let (x, _) = standardize(normal(30, 80, 9).view()).unwrap();
        let y = x.column(3).to_owned() * 3.0 - x.column(40).to_owned() * 3.0 + normal(30, 1, 10).column(0);
        let y = y.insert_axis(ndarray::Axis(1));
        let s = block_stats(x.view(), y.view(), &ScreenPolicy::default()).unwrap();
        let support = s.screened_support.clone().unwrap();
        assert!(support.contains(&3) && support.contains(&40), "{support:?}");
        assert!(support.len() <= 27);
        assert_eq!(s.effective_p, support.len());
    }

    #[test]
    fn screening_cap_truncates_by_score() {
        let (x, _) = standardize(normal(10, 30, 11).view()).unwrap();
        let y = normal(10, 3, 12);
        let support = screen_support(x.view(), y.view(), &ScreenLambda::Fixed { lambda: 0.0001 }, 4).unwrap();
        assert_eq!(support.len(), 4);
        assert!(support.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_single_block_equals_block_stats() {
        let x = normal(15, 3, 13);
        let y = normal(15, 2, 14);
        let g = GroupSpec::new(vec![3], vec![2]).unwrap();
        let grid = all_block_stats(x.view(), y.view(), &g, &ScreenPolicy::default()).unwrap();
        let single = block_stats(x.view(), y.view(), &ScreenPolicy::default()).unwrap();
        assert_eq!(grid.get(0, 0), &single);
    }

    #[test]
    fn signal_block_has_largest_r2bar() {
        let (x, _) = standardize(normal(60, 6, 15).view()).unwrap();
        let mut y = normal(60, 4, 16);
        let b = normal(3, 2, 17).mapv(|v| 3.0 * v);
        let signal = x.slice(s![.., 3..6]).dot(&b);
        y.slice_mut(s![.., 0..2]).zip_mut_with(&signal, |a, b| *a += b);
        let g = GroupSpec::new(vec![3, 3], vec![2, 2]).unwrap();
        let grid = all_block_stats(x.view(), y.view(), &g, &ScreenPolicy::default()).unwrap();
        let best = grid.cells().iter().max_by(|a, b| a.r2bar.total_cmp(&b.r2bar)).unwrap();
        assert_eq!((best.k, best.j), (1, 0));
        let others = grid.cells().iter().filter(|c| (c.k, c.j) != (1, 0));
        assert!(others.clone().all(|c| c.r2bar < best.r2bar));
        // The dense-projector oracle agrees on the ordering.
        let xn = nalgebra::DMatrix::from_fn(60, 3, |r, c| x[[r, 3 + c]]);
        let proj = &xn * (xn.transpose() * &xn).try_inverse().unwrap() * xn.transpose();
        let yn = nalgebra::DMatrix::from_fn(60, 2, |r, c| y[[r, c]]);
        let fit = (&proj * &yn).norm_squared();
        let rss = (&yn - &proj * &yn).norm_squared();
        assert!((1.0 - rss / 56.0 * 2.0 / fit - best.r2bar).abs() < 1e-10);
    }

    #[test]
    fn indicator_from_gamma_rules() {
        let grid = grid_from_r2bar(&array![[0.9], [0.3]]);
        let ind = indicator_from_gamma(&grid, 0.5).unwrap();
        assert_eq!(ind.delta, array![[true], [false]]);
        let all = indicator_from_gamma(&grid, 1.0 - 1e-9).unwrap();
        assert_eq!(all.num_selected(), 2);
        let none = indicator_from_gamma(&grid, 0.05).unwrap();
        assert_eq!(none.num_selected(), 0);
        assert!(indicator_from_gamma(&grid, 1.0).is_err());
    }

    #[test]
    fn select_threshold_reports_alpha_and_active() {
        let grid = grid_from_r2bar(&array![[0.95, -0.5], [0.02, 0.94], [0.01, -0.6]]);
        let ind = select_threshold(&grid, 0.05).unwrap();
        assert_eq!(ind.active, vec![(0, 0), (1, 1)]);
        assert_eq!(ind.alpha, Some(0.05));
        assert!((ind.c_hat.unwrap() - (0.94 - THRESHOLD_BACKOFF)).abs() < 1e-15);
        assert!((ind.gamma_hat().unwrap() - (1.0 - ind.c_hat.unwrap())).abs() < 1e-15);
    }

    #[test]
    fn rule_minimizes_aggregate_objective() {
        let x = normal(40, 6, 18);
        let mut y = normal(40, 4, 19);
        let sig = x.slice(s![.., 0..3]).dot(&normal(3, 2, 20));
        y.slice_mut(s![.., 0..2]).zip_mut_with(&sig, |a, b| *a += b);
        let g = GroupSpec::new(vec![3, 3], vec![2, 2]).unwrap();
        let grid = all_block_stats(x.view(), y.view(), &g, &ScreenPolicy::default()).unwrap();
        let gamma = 0.4;
        let rule = indicator_from_gamma(&grid, gamma).unwrap();
        let best = indicator_objective(&grid, &rule.delta, gamma);
        for mask in 0u32..16 {
            let delta = Array2::from_shape_fn((2, 2), |(k, j)| mask >> (k * 2 + j) & 1 == 1);
            assert!(best <= indicator_objective(&grid, &delta, gamma) + 1e-12);
        }
    }
}
