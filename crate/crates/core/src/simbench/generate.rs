use ndarray::{s, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::spec::{KjLaw, SimulationSpec};
use crate::blockmodel::{GroupSpec, IndicatorMatrix};
use crate::error::Result;
use crate::linalg::{standardize, Matrix, Scaling};

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Generating coefficients, on the raw scale.
    pub b_true: Matrix,
    /// `b_true` mapped to the standardized training scale,
    /// `b[i, c] · s_x[i] / s_y[c]`.
    pub b_std: Matrix,
    pub delta_true: IndicatorMatrix,
    /// `(row, column)` of every nonzero entry, row-major.
    pub nonzero_entries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SimData {
    /// Standardized with training statistics.
    pub x_train: Matrix,
    pub y_train: Matrix,
    /// Standardized with the training statistics.
    pub x_test: Matrix,
    pub y_test: Matrix,
    pub x_scaling: Scaling,
    pub y_scaling: Scaling,
    pub groups: GroupSpec,
    pub truth: GroundTruth,
}

fn draw_coefficients(spec: &SimulationSpec, groups: &GroupSpec, rng: &mut ChaCha8Rng) -> Matrix {
    let mut b = Array2::zeros((spec.p, spec.q));
    let num_k = groups.num_covariate_groups();
    let density = 1.0 - spec.sparsity_level / 100.0;
    let law = spec.coef_law;
    for j in 0..groups.num_response_groups() {
        let kj = match &spec.kj_law {
            KjLaw::Fixed { k } => *k,
            KjLaw::Random { choices } => choices[rng.random_range(0..choices.len())],
        };
        let mut blocks = sample(rng, num_k, kj).into_vec();
        blocks.sort_unstable();
        let rows_j = groups.response_range(j);
        for k in blocks {
            let rows_k = groups.covariate_range(k);
            let (pk, qj) = (rows_k.len(), rows_j.len());
            let nnz = ((pk * qj) as f64 * density).round().max(1.0) as usize;
            let mut block = b.slice_mut(s![rows_k, rows_j.clone()]);
            for pos in sample(rng, pk * qj, nnz.min(pk * qj)) {
                let mag = rng.random_range(law.min_abs..=law.max_abs);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                block[[pos / qj, pos % qj]] = sign * mag;
            }
        }
    }
    b
}

/// Rows with `corr(x_a, x_b) = rho^|a−b|`, built as an AR(1) recursion.
fn draw_ar1(rows: usize, cols: usize, rho: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = Array2::zeros((rows, cols));
    for mut row in x.rows_mut() {
        let mut prev: f64 = rng.sample(StandardNormal);
        row[0] = prev;
        for a in 1..cols {
            let z: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * z;
            row[a] = prev;
        }
    }
    x
}

/// Draws one data set. All randomness comes from `spec.seed`.
pub fn generate(spec: &SimulationSpec) -> Result<SimData> {
    spec.validate()?;
    let groups = spec.group_spec()?;
    let (n_train, n_test) = spec.row_split()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let b_true = draw_coefficients(spec, &groups, &mut rng);
    let x = draw_ar1(n_train + n_test, spec.p, spec.rho, &mut rng);
    let noise = Array2::from_shape_fn((n_train + n_test, spec.q), |_| {
        spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    let y = x.dot(&b_true) + noise;

    let (x_train, x_scaling) = standardize(x.slice(s![..n_train, ..]))?;
    let (y_train, y_scaling) = standardize(y.slice(s![..n_train, ..]))?;
    let x_test = x_scaling.apply(x.slice(s![n_train.., ..]))?;
    let y_test = y_scaling.apply(y.slice(s![n_train.., ..]))?;

    let b_std = Array2::from_shape_fn(b_true.dim(), |(i, c)| {
        b_true[[i, c]] * x_scaling.scales[i] / y_scaling.scales[c]
    });
    let delta = groups.block_pattern(b_true.view());
    let nonzero_entries = b_true
        .indexed_iter()
        .filter(|(_, &v)| v != 0.0)
        .map(|(idx, _)| idx)
        .collect();
    Ok(SimData {
        x_train,
        y_train,
        x_test,
        y_test,
        x_scaling,
        y_scaling,
        groups,
        truth: GroundTruth {
            b_true,
            b_std,
            delta_true: IndicatorMatrix::from_delta(delta, None, None),
            nonzero_entries,
        },
    })
}
