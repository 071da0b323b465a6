//! Block-selected estimators: the single-block OLS and screened OLS
//! estimators, the two-step block-restricted lasso, and whole-matrix
//! lasso / elastic-net baselines.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::blockmodel::{
    all_block_stats, block_stats_from_energies, indicator_from_gamma, screen_support, select_threshold, BlockGrid, BlockStats, GroupSpec,
    IndicatorMatrix, ScreenLambda, ScreenPolicy,
};
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, ols_solve, projection_energy, select_columns, thin_qr, Scaling, DEFAULT_RANK_TOL};
use crate::solver::{fit_columns, LambdaSelection, PenaltySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nbslasso,
    Lasso,
    Enet,
    SingleBlockOls,
    SingleBlockScreened,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Nbslasso => "nbslasso",
            Method::Lasso => "lasso",
            Method::Enet => "enet",
            Method::SingleBlockOls => "single_block_ols",
            Method::SingleBlockScreened => "single_block_screened",
        }
    }

    /// Name used in benchmark tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            Method::Nbslasso => "NBSlasso",
            Method::Lasso => "Lasso",
            Method::Enet => "ElasticNet",
            Method::SingleBlockOls => "SingleBlockOLS",
            Method::SingleBlockScreened => "SingleBlockScreened",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nbslasso" => Ok(Method::Nbslasso),
            "lasso" => Ok(Method::Lasso),
            "enet" | "elasticnet" | "elastic_net" => Ok(Method::Enet),
            "single_block_ols" => Ok(Method::SingleBlockOls),
            "single_block_screened" => Ok(Method::SingleBlockScreened),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Column scalings of the data a fit was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x: Scaling,
    pub y: Scaling,
}

impl Standardization {
    /// Maps standardized-scale coefficients to the original scale:
    /// `b_raw[i, c] = b[i, c] · s_y[c] / s_x[i]`.
    pub fn unstandardize(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        Array2::from_shape_fn(b.dim(), |(i, c)| b[[i, c]] * self.y.scales[c] / self.x.scales[i])
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// P×Q estimate, on the scale of the data passed in.
    pub coefficients: Array2<f64>,
    pub indicator: IndicatorMatrix,
    pub method: Method,
    /// λ per response column; NaN for columns with no allowed covariate.
    pub lambda_used: Vec<f64>,
    pub elapsed_seconds: f64,
    pub standardization: Option<Standardization>,
    pub block_stats: Option<BlockGrid>,
}

impl FitResult {
    pub fn with_standardization(mut self, s: Standardization) -> Self {
        self.standardization = Some(s);
        self
    }

    /// Coefficients on the original data scale, when the scaling is known.
    pub fn raw_coefficients(&self) -> Array2<f64> {
        match &self.standardization {
            Some(s) => s.unstandardize(self.coefficients.view()),
            None => self.coefficients.clone(),
        }
    }
}

/// Second-step lasso settings shared by the two-step estimator and the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Step2Config {
    pub penalty: PenaltySpec,
    pub selection: LambdaSelection,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbsConfig {
    pub alpha: f64,
    pub screen: ScreenPolicy,
    pub step2: Step2Config,
}

impl Default for NbsConfig {
    fn default() -> Self {
        NbsConfig {
            alpha: 0.05,
            screen: ScreenPolicy::default(),
            step2: Step2Config::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Lasso,
    ElasticNet { mix: f64 },
}

impl Baseline {
    pub const DEFAULT_ENET_MIX: f64 = 0.5;

    pub fn method(&self) -> Method {
        match self {
            Baseline::Lasso => Method::Lasso,
            Baseline::ElasticNet { .. } => Method::Enet,
        }
    }
}

fn check_xy(x: &ArrayView2<'_, f64>, y: &ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "X has {} rows but Y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    ensure_finite(*x, "X")?;
    ensure_finite(*y, "Y")
}

fn single_indicator(stats: &BlockStats, gamma: f64) -> Result<IndicatorMatrix> {
    indicator_from_gamma(&BlockGrid::single(stats.clone()), gamma)
}

/// Single-block estimator with full-rank covariates: OLS times the block
/// indicator, `B̂ = (X₁ᵀX₁)⁻¹X₁ᵀY₁ · Δ̂₁₁`.
pub fn single_block_ols(x1: ArrayView2<'_, f64>, y1: ArrayView2<'_, f64>, gamma: f64) -> Result<FitResult> {
    let start = Instant::now();
    check_xy(&x1, &y1)?;
    let (n, p) = x1.dim();
    if p + 3 > n {
        return Err(Error::Config(format!(
            "single-block OLS needs p <= n - 3, got p = {p}, n = {n}"
        )));
    }
    let f = thin_qr(x1, DEFAULT_RANK_TOL);
    if f.is_rank_deficient() {
        log::warn!("X has rank {} < {p}; using the pivoted basic solution", f.rank());
    }
    let (fit, rss) = projection_energy(&f, y1)?;
    let stats = block_stats_from_energies(n, f.rank(), fit, rss, None)?;
    let indicator = single_indicator(&stats, gamma)?;
    let mut coefficients = ols_solve(&f, y1)?;
    if !indicator.is_selected(0, 0) {
        coefficients.fill(0.0);
    }
    Ok(FitResult {
        coefficients,
        indicator,
        method: Method::SingleBlockOls,
        lambda_used: Vec::new(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        standardization: None,
        block_stats: Some(BlockGrid::single(stats)),
    })
}

/// Single-block estimator for wide covariates: OLS on the lasso-screened
/// support times the indicator; zero off the support.
pub fn single_block_screened(
    x1: ArrayView2<'_, f64>,
    y1: ArrayView2<'_, f64>,
    gamma: f64,
    screen: &ScreenLambda,
) -> Result<FitResult> {
    let start = Instant::now();
    check_xy(&x1, &y1)?;
    let (n, p) = x1.dim();
    if n < 4 {
        return Err(Error::Dimension(format!("need n >= 4 rows, got {n}")));
    }
    let support = screen_support(x1, y1, screen, (n - 3).min(p))?;
    let sub = select_columns(x1, &support);
    let f = thin_qr(sub.view(), DEFAULT_RANK_TOL);
    let (fit, rss) = projection_energy(&f, y1)?;
    let stats = block_stats_from_energies(n, f.rank(), fit, rss, Some(support.clone()))?;
    let indicator = single_indicator(&stats, gamma)?;

    let mut coefficients = Array2::zeros((p, y1.ncols()));
    if indicator.is_selected(0, 0) {
        let b_sub = ols_solve(&f, y1)?;
        for (row, &col) in support.iter().enumerate() {
            coefficients.row_mut(col).assign(&b_sub.row(row));
        }
    }
    Ok(FitResult {
        coefficients,
        indicator,
        method: Method::SingleBlockScreened,
        lambda_used: Vec::new(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
        standardization: None,
        block_stats: Some(BlockGrid::single(stats)),
    })
}

/// Allowed covariates for each response column: the union of the covariate
/// groups selected for that column's response group.
pub fn block_masks(groups: &GroupSpec, indicator: &IndicatorMatrix) -> Vec<Vec<usize>> {
    let mut masks = Vec::with_capacity(groups.total_responses());
    for j in 0..groups.num_response_groups() {
        let allowed: Vec<usize> = (0..groups.num_covariate_groups())
            .filter(|&k| indicator.is_selected(k, j))
            .flat_map(|k| groups.covariate_range(k))
            .collect();
        for _ in groups.response_range(j) {
            masks.push(allowed.clone());
        }
    }
    masks
}

/// Two-step estimator: block selection, then per-column lasso restricted to
/// the selected blocks. Unselected blocks are exactly zero.
pub fn nbslasso_fit(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    groups: &GroupSpec,
    config: &NbsConfig,
) -> Result<FitResult> {
    let start = Instant::now();
    check_xy(&x, &y)?;
    let grid = all_block_stats(x, y, groups, &config.screen)?;
    let indicator = select_threshold(&grid, config.alpha)?;
    if indicator.num_selected() == 0 {
        log::warn!("no block selected; coefficient matrix is zero");
    }
    let masks = block_masks(groups, &indicator);
    let step2 = &config.step2;
    let fits = fit_columns(x, y, &masks, &step2.penalty, &step2.selection, step2.seed)?;
    if !fits.all_converged {
        log::warn!("some second-step lasso fits hit the iteration budget");
    }
    Ok(FitResult {
        coefficients: fits.coefficients,
        indicator,
        method: Method::Nbslasso,
        lambda_used: fits.lambdas,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        standardization: None,
        block_stats: Some(grid),
    })
}

/// Whole-matrix per-column lasso or elastic net. The block indicator is read
/// off the estimate: a block is active iff it holds any nonzero entry.
pub fn baseline_fit(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    groups: &GroupSpec,
    baseline: Baseline,
    step2: &Step2Config,
) -> Result<FitResult> {
    let start = Instant::now();
    check_xy(&x, &y)?;
    groups.check_dims(x.ncols(), y.ncols())?;
    let mix = match baseline {
        Baseline::Lasso => 1.0,
        Baseline::ElasticNet { mix } => mix,
    };
    let penalty = PenaltySpec { mix, ..step2.penalty };
    let masks = vec![(0..x.ncols()).collect::<Vec<_>>(); y.ncols()];
    let fits = fit_columns(x, y, &masks, &penalty, &step2.selection, step2.seed)?;
    let delta = groups.block_pattern(fits.coefficients.view());
    Ok(FitResult {
        indicator: IndicatorMatrix::from_delta(delta, None, None),
        coefficients: fits.coefficients,
        method: baseline.method(),
        lambda_used: fits.lambdas,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        standardization: None,
        block_stats: None,
    })
}
