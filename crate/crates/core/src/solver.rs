//! Penalized least squares by cyclic coordinate descent.
//!
//! The objective is `(1/(2n))‖y − Xb‖² + λ·(mix·‖b‖₁ + (1 − mix)/2·‖b‖²)`.
//! An unnormalized penalty `‖y − Xb‖² + λ'‖b‖₁` corresponds to `λ = λ'/(2n)`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ensure_finite;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda: f64,
    /// 1 is the pure lasso; smaller values blend in a ridge term.
    pub mix: f64,
    /// Budget of coordinate sweeps.
    pub max_iter: usize,
    /// Convergence threshold on the largest coordinate change in a sweep.
    pub tol: f64,
}

impl Default for PenaltySpec {
    fn default() -> Self {
        PenaltySpec {
            lambda: 0.0,
            mix: 1.0,
            max_iter: 10_000,
            tol: 1e-7,
        }
    }
}

impl PenaltySpec {
    pub fn lasso(lambda: f64) -> Self {
        PenaltySpec {
            lambda,
            ..Default::default()
        }
    }

    pub fn elastic_net(lambda: f64, mix: f64) -> Self {
        PenaltySpec {
            lambda,
            mix,
            ..Default::default()
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        PenaltySpec { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Domain(format!("mix must lie in [0, 1], got {}", self.mix)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Domain(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }

    fn l1(&self) -> f64 {
        self.lambda * self.mix
    }

    fn l2(&self) -> f64 {
        self.lambda * (1.0 - self.mix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub support: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LassoFit {
    fn new(coefficients: Vec<f64>, objective: f64, iterations: usize, converged: bool) -> Self {
        let support = coefficients
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(i, _)| i)
            .collect();
        LassoFit {
            coefficients,
            support,
            objective,
            iterations,
            converged,
        }
    }
}

pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Column-major copy of a row/column subset of the design. Coordinate
/// descent runs on the gradient `Xᵀr/n`, updated through Gram columns that
/// are computed the first time a coordinate moves.
pub(crate) struct Design {
    n: usize,
    p: usize,
    data: Vec<f64>,
    /// `x_iᵀx_i / n` per column.
    sq: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
}

impl Design {
    pub(crate) fn new(x: ArrayView2<'_, f64>, rows: Option<&[usize]>, cols: &[usize]) -> Self {
        let n = rows.map_or(x.nrows(), <[usize]>::len);
        let p = cols.len();
        let mut data = Vec::with_capacity(n * p);
        for &c in cols {
            let col = x.column(c);
            match rows {
                Some(rows) => data.extend(rows.iter().map(|&r| col[r])),
                None => data.extend(col.iter().copied()),
            }
        }
        let sq = data
            .chunks_exact(n.max(1))
            .take(p)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n as f64)
            .collect();
        Design {
            n,
            p,
            data,
            sq,
            gram: vec![None; p],
        }
    }

    pub(crate) fn full(x: ArrayView2<'_, f64>) -> Self {
        let cols: Vec<usize> = (0..x.ncols()).collect();
        Design::new(x, None, &cols)
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    fn residual(&self, y: &[f64], beta: &[f64]) -> Vec<f64> {
        let mut r = y.to_vec();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                r.iter_mut().zip(self.col(j)).for_each(|(ri, xi)| *ri -= b * xi);
            }
        }
        r
    }

    fn gradient(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n as f64;
        (0..self.p).map(|i| dot(self.col(i), r) / n).collect()
    }

    fn objective(&self, r: &[f64], beta: &[f64], pen: &PenaltySpec) -> f64 {
        let rss: f64 = r.iter().map(|v| v * v).sum();
        rss / (2.0 * self.n as f64) + penalty_value(beta, pen)
    }

    fn kkt(&self, r: &[f64], beta: &[f64], pen: &PenaltySpec) -> f64 {
        kkt_max(&self.gradient(r), beta, pen)
    }

    fn ensure_gram(&mut self, i: usize) {
        if self.gram[i].is_none() {
            let n = self.n as f64;
            let xi = self.col(i);
            let column = (0..self.p).map(|m| dot(self.col(m), xi) / n).collect();
            self.gram[i] = Some(column);
        }
    }

    /// One cyclic pass over `coords`; returns the largest coefficient change.
    fn sweep(&mut self, coords: &[usize], grad: &mut [f64], beta: &mut [f64], pen: &PenaltySpec) -> f64 {
        let (l1, l2) = (pen.l1(), pen.l2());
        let mut max_change = 0.0_f64;
        for &i in coords {
            let sq = self.sq[i];
            if sq == 0.0 {
                continue;
            }
            let z = grad[i] + sq * beta[i];
            let new = soft_threshold(z, l1) / (sq + l2);
            let delta = new - beta[i];
            if delta != 0.0 {
                self.ensure_gram(i);
                let g = self.gram[i].as_ref().expect("gram column");
                grad.iter_mut().zip(g).for_each(|(gm, gmi)| *gm -= gmi * delta);
                beta[i] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// Coordinate descent from `beta`, alternating full sweeps with sweeps
    /// restricted to the current active set. A run only counts as converged
    /// once a full sweep moves no coefficient by `tol` and the KKT residual,
    /// recomputed from the exact residual, is within `tol`.
    fn solve(&mut self, y: &[f64], pen: &PenaltySpec, beta: &mut [f64]) -> (usize, bool) {
        let all: Vec<usize> = (0..self.p).collect();
        let mut grad = self.gradient(&self.residual(y, beta));
        let mut iters = 0;
        #[cfg(debug_assertions)]
        let (xty, yy) = (self.gradient(y), y.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.n as f64));
        #[cfg(debug_assertions)]
        let mut last_obj = quadratic_objective(yy, &xty, &grad, beta, pen);
        while iters < pen.max_iter {
            let change = self.sweep(&all, &mut grad, beta, pen);
            iters += 1;
            #[cfg(debug_assertions)]
            {
                let obj = quadratic_objective(yy, &xty, &grad, beta, pen);
                debug_assert!(
                    obj <= last_obj + 1e-9 * last_obj.abs().max(1.0),
                    "coordinate descent objective increased: {last_obj} -> {obj}"
                );
                last_obj = obj;
            }
            if change < pen.tol {
                grad = self.gradient(&self.residual(y, beta));
                if kkt_max(&grad, beta, pen) <= pen.tol {
                    return (iters, true);
                }
                continue;
            }
            let active: Vec<usize> = (0..self.p).filter(|&i| beta[i] != 0.0).collect();
            while iters < pen.max_iter {
                let change = self.sweep(&active, &mut grad, beta, pen);
                iters += 1;
                if change < pen.tol {
                    break;
                }
            }
        }
        (iters, false)
    }

    fn fit(&mut self, y: &[f64], pen: &PenaltySpec, warm: Option<&[f64]>) -> LassoFit {
        let mut beta = warm.map_or_else(|| vec![0.0; self.p], <[f64]>::to_vec);
        let (iters, converged) = self.solve(y, pen, &mut beta);
        let r = self.residual(y, &beta);
        let obj = self.objective(&r, &beta, pen);
        LassoFit::new(beta, obj, iters, converged)
    }
}

fn penalty_value(beta: &[f64], pen: &PenaltySpec) -> f64 {
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    pen.l1() * l1 + pen.l2() / 2.0 * l2
}

/// Objective from the gradient: `yᵀy/2n − ½·βᵀ(Xᵀy/n + g) + penalty`.
#[cfg(debug_assertions)]
fn quadratic_objective(yy: f64, xty: &[f64], grad: &[f64], beta: &[f64], pen: &PenaltySpec) -> f64 {
    let cross: f64 = beta.iter().zip(xty.iter().zip(grad)).map(|(b, (a, g))| b * (a + g)).sum();
    yy - cross / 2.0 + penalty_value(beta, pen)
}

fn kkt_max(grad: &[f64], beta: &[f64], pen: &PenaltySpec) -> f64 {
    grad.iter()
        .zip(beta)
        .map(|(&g, &b)| kkt_term(g, b, pen))
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn kkt_term(g: f64, b: f64, pen: &PenaltySpec) -> f64 {
    if b != 0.0 {
        (g - pen.l2() * b - pen.l1() * b.signum()).abs()
    } else {
        (g.abs() - pen.l1()).max(0.0)
    }
}

fn check_inputs(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    ensure_finite(x, "design")?;
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("response has a non-finite entry {v}")));
    }
    Ok(())
}

/// Cyclic coordinate descent for the lasso / elastic net.
pub fn lasso_cd(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    pen: &PenaltySpec,
    warm: Option<&[f64]>,
) -> Result<LassoFit> {
    check_inputs(x, y)?;
    pen.validate()?;
    if let Some(w) = warm {
        if w.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "warm start has {} entries, design has {} columns",
                w.len(),
                x.ncols()
            )));
        }
    }
    let y = y.to_vec();
    Ok(Design::full(x).fit(&y, pen, warm))
}

pub fn objective(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, beta: &[f64], pen: &PenaltySpec) -> f64 {
    let d = Design::full(x);
    let y = y.to_vec();
    let r = d.residual(&y, beta);
    d.objective(&r, beta, pen)
}

/// Largest KKT violation of `beta` over all coordinates.
pub fn kkt_violation(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    beta: &[f64],
    pen: &PenaltySpec,
) -> f64 {
    let d = Design::full(x);
    let y = y.to_vec();
    let r = d.residual(&y, beta);
    d.kkt(&r, beta, pen)
}

/// Smallest λ at which the lasso solution is all zero: `max_i |x_iᵀy| / n`.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let n = x.nrows() as f64;
    x.columns()
        .into_iter()
        .map(|c| c.dot(&y).abs() / n)
        .fold(0.0, f64::max)
}

fn geometric_grid(top: f64, n_lambdas: usize, ratio: f64) -> Vec<f64> {
    let step = ratio.ln() / (n_lambdas - 1) as f64;
    (0..n_lambdas)
        .map(|i| if i == 0 { top } else { top * (step * i as f64).exp() })
        .collect()
}

/// Geometric λ grid from `lambda_max` down to `ratio · lambda_max`.
pub fn lambda_path(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    n_lambdas: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if n_lambdas < 2 {
        return Err(Error::Domain(format!("n_lambdas must be >= 2, got {n_lambdas}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Domain(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    check_inputs(x, y)?;
    Ok(geometric_grid(lambda_max(x, y), n_lambdas, ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub n_lambdas: usize,
    /// `None` picks 1e-3 when n > p and 1e-2 otherwise.
    pub ratio: Option<f64>,
    /// Tolerance for the held-out fold fits and the warm-start walk down the
    /// path; never tighter than the penalty's own `tol`. The returned fit at
    /// the chosen λ always uses the penalty's `tol`.
    #[serde(default = "default_path_tol")]
    pub path_tol: f64,
}

fn default_path_tol() -> f64 {
    1e-4
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            n_lambdas: 100,
            ratio: None,
            path_tol: default_path_tol(),
        }
    }
}

impl PathConfig {
    fn ratio_for(&self, n: usize, p: usize) -> f64 {
        self.ratio.unwrap_or(if n > p { 1e-3 } else { 1e-2 })
    }

    /// Path for a given penalty mix; the head is scaled by `1/mix` so the
    /// first fit is the null model for the elastic net too.
    fn grid(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, mix: f64) -> Result<Vec<f64>> {
        let ratio = self.ratio_for(x.nrows(), x.ncols());
        let mut path = lambda_path(x, y, self.n_lambdas, ratio)?;
        if mix > 0.0 && mix < 1.0 {
            path.iter_mut().for_each(|l| *l /= mix);
        }
        Ok(path)
    }
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub best_lambda: f64,
    pub fit: LassoFit,
    pub lambdas: Vec<f64>,
    /// Mean held-out squared error per λ.
    pub cv_mse: Vec<f64>,
}

/// Deterministic fold labels for `n` rows.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        labels[row] = pos % folds;
    }
    labels
}

/// K-fold cross-validated λ along the default path, refit on all rows.
pub fn cv_lasso(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    folds: usize,
    pen: &PenaltySpec,
    seed: u64,
    path: &PathConfig,
) -> Result<CvResult> {
    check_inputs(x, y)?;
    pen.validate()?;
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(Error::Domain(format!(
            "folds must lie in [2, {n}], got {folds}"
        )));
    }
    let lambdas = path.grid(x, y, pen.mix)?;
    let loose = PenaltySpec {
        tol: pen.tol.max(path.path_tol),
        ..*pen
    };
    let labels = fold_assignment(n, folds, seed);
    let cols: Vec<usize> = (0..x.ncols()).collect();

    let fold_errors: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
            let mut design = Design::new(x, Some(&train), &cols);
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let mut beta = vec![0.0; cols.len()];
            lambdas
                .iter()
                .map(|&lambda| {
                    design.solve(&y_train, &loose.with_lambda(lambda), &mut beta);
                    let sse: f64 = test
                        .iter()
                        .map(|&i| {
                            let pred: f64 = beta
                                .iter()
                                .enumerate()
                                .filter(|(_, b)| **b != 0.0)
                                .map(|(j, b)| b * x[[i, j]])
                                .sum();
                            (y[i] - pred).powi(2)
                        })
                        .sum();
                    sse / test.len() as f64
                })
                .collect()
        })
        .collect();

    let cv_mse: Vec<f64> = (0..lambdas.len())
        .map(|l| fold_errors.iter().map(|e| e[l]).sum::<f64>() / folds as f64)
        .collect();
    let best = cv_mse
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v < cv_mse[best] { i } else { best });

    let mut design = Design::full(x);
    let yv = y.to_vec();
    let mut beta = vec![0.0; cols.len()];
    for &lambda in &lambdas[..best] {
        design.solve(&yv, &loose.with_lambda(lambda), &mut beta);
    }
    let fit = design.fit(&yv, &pen.with_lambda(lambdas[best]), Some(&beta));
    Ok(CvResult {
        best_lambda: lambdas[best],
        fit,
        lambdas,
        cv_mse,
    })
}

pub const DEFAULT_FOLDS: usize = 5;

/// How a per-column λ is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSelection {
    /// Use `PenaltySpec::lambda` as given.
    Fixed,
    /// `λ' = m3·sqrt(n·ln P)` on the unnormalized scale, i.e.
    /// `λ = m3·sqrt(ln P / n) / 2` internally, with P the full covariate count.
    TheoryRate { m3: f64 },
    CrossValidation { folds: usize, path: PathConfig },
}

impl Default for LambdaSelection {
    fn default() -> Self {
        LambdaSelection::CrossValidation {
            folds: DEFAULT_FOLDS,
            path: PathConfig::default(),
        }
    }
}

pub fn theory_rate_lambda(m3: f64, n: usize, total_covariates: usize) -> f64 {
    let p = total_covariates.max(2) as f64;
    m3 * (p.ln() / n as f64).sqrt() / 2.0
}

/// Stable per-unit seed, independent of scheduling order.
pub fn derive_seed(base: u64, unit: u64) -> u64 {
    let mut z = base ^ unit.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct ColumnFits {
    pub coefficients: Array2<f64>,
    pub lambdas: Vec<f64>,
    pub all_converged: bool,
}

fn check_masks(p: usize, q: usize, masks: &[Vec<usize>]) -> Result<()> {
    if masks.len() != q {
        return Err(Error::Dimension(format!(
            "{} column masks for {q} response columns",
            masks.len()
        )));
    }
    for (c, m) in masks.iter().enumerate() {
        if let Some(&bad) = m.iter().find(|&&i| i >= p) {
            return Err(Error::Dimension(format!(
                "mask for response column {c} names covariate {bad}, only {p} exist"
            )));
        }
    }
    Ok(())
}

/// Independent per-column penalized fits, each restricted to its mask.
/// Entries outside a column's mask are exactly zero.
pub fn fit_columns(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    masks: &[Vec<usize>],
    pen: &PenaltySpec,
    selection: &LambdaSelection,
    seed: u64,
) -> Result<ColumnFits> {
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension(format!(
            "X has {} rows but Y has {}",
            x.nrows(),
            y.nrows()
        )));
    }
    ensure_finite(x, "X")?;
    ensure_finite(y, "Y")?;
    pen.validate()?;
    let (p, q) = (x.ncols(), y.ncols());
    check_masks(p, q, masks)?;

    let per_column: Vec<Result<(Vec<f64>, f64, bool)>> = (0..q)
        .into_par_iter()
        .map(|c| {
            let mask = &masks[c];
            if mask.is_empty() {
                return Ok((Vec::new(), f64::NAN, true));
            }
            let yc = y.column(c);
            let sub = crate::linalg::select_columns(x, mask);
            match *selection {
                LambdaSelection::Fixed => {
                    let fit = lasso_cd(sub.view(), yc, pen, None)?;
                    Ok((fit.coefficients, pen.lambda, fit.converged))
                }
                LambdaSelection::TheoryRate { m3 } => {
                    let lambda = theory_rate_lambda(m3, x.nrows(), p);
                    let fit = lasso_cd(sub.view(), yc, &pen.with_lambda(lambda), None)?;
                    Ok((fit.coefficients, lambda, fit.converged))
                }
                LambdaSelection::CrossValidation { folds, path } => {
                    let cv = cv_lasso(sub.view(), yc, folds, pen, derive_seed(seed, c as u64), &path)?;
                    Ok((cv.fit.coefficients, cv.best_lambda, cv.fit.converged))
                }
            }
        })
        .collect();

    let mut coefficients = Array2::zeros((p, q));
    let mut lambdas = Vec::with_capacity(q);
    let mut all_converged = true;
    for (c, res) in per_column.into_iter().enumerate() {
        let (coefs, lambda, converged) = res?;
        for (&row, &b) in masks[c].iter().zip(&coefs) {
            coefficients[[row, c]] = b;
        }
        lambdas.push(lambda);
        all_converged &= converged;
    }
    Ok(ColumnFits {
        coefficients,
        lambdas,
        all_converged,
    })
}

/// Per-column lasso at a fixed penalty, restricted to the allowed covariates.
pub fn multi_response_lasso(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    pen: &PenaltySpec,
    masks: &[Vec<usize>],
) -> Result<Array2<f64>> {
    Ok(fit_columns(x, y, masks, pen, &LambdaSelection::Fixed, 0)?.coefficients)
}
