//! Dense kernels shared by every other module: column standardization,
//! column-pivoted thin QR, projections onto a column span and least squares.
//!
//! Matrices are `ndarray::Array2<f64>` in the default row-major layout.
//! Projectors are never formed explicitly; a projection is always `q (qᵀ y)`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Default pivot tolerance for [`thin_qr`], relative to the leading pivot.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub fn ensure_finite(m: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if let Some(((r, c), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "{what} has a non-finite entry {v} at row {r}, column {c}"
        )));
    }
    Ok(())
}

/// Column centers and scales recorded by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Scaling {
    pub fn identity(cols: usize) -> Self {
        Scaling {
            centers: vec![0.0; cols],
            scales: vec![1.0; cols],
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Applies stored centers and scales to new rows, e.g. a held-out test set.
    pub fn apply(&self, m: ArrayView2<'_, f64>) -> Result<Matrix> {
        if m.ncols() != self.len() {
            return Err(Error::Dimension(format!(
                "scaling has {} columns but matrix has {}",
                self.len(),
                m.ncols()
            )));
        }
        let mut out = m.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (c, s) = (self.centers[j], self.scales[j]);
            col.mapv_inplace(|v| (v - c) / s);
        }
        Ok(out)
    }
}

/// Centers every column to mean 0 and scales it to sample sd 1 (divisor n − 1).
///
/// Constant columns keep scale 1 and become exactly zero.
pub fn standardize(m: ArrayView2<'_, f64>) -> Result<(Matrix, Scaling)> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    ensure_finite(m, "input matrix")?;
    let mut out = m.to_owned();
    let mut scaling = Scaling::identity(m.ncols());
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            scaling.centers[j] = first;
            col.fill(0.0);
            continue;
        }
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) / scale);
        scaling.centers[j] = mean;
        scaling.scales[j] = scale;
    }
    Ok((out, scaling))
}

pub fn frobenius_sq(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b)
}

/// Thin QR factor of the retained columns of a matrix.
///
/// `q · r_upper` reproduces the columns listed in `kept_columns`, in that
/// (pivot) order.
#[derive(Debug, Clone)]
pub struct QrFactor {
    q: Matrix,
    r_upper: Matrix,
    kept_columns: Vec<usize>,
    n_cols: usize,
}

impl QrFactor {
    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r_upper(&self) -> &Matrix {
        &self.r_upper
    }

    pub fn rank(&self) -> usize {
        self.kept_columns.len()
    }

    pub fn kept_columns(&self) -> &[usize] {
        &self.kept_columns
    }

    pub fn rows(&self) -> usize {
        self.q.nrows()
    }

    /// Column count of the factored matrix, including dropped columns.
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank() < self.n_cols
    }

    fn check_rows(&self, y: &ArrayView2<'_, f64>) -> Result<()> {
        if y.nrows() != self.rows() {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, factor has {}",
                y.nrows(),
                self.rows()
            )));
        }
        Ok(())
    }
}

/// Column-pivoted Householder QR.
///
/// Factorization stops once the largest remaining column norm falls to
/// `tol` times the leading pivot; the remaining columns are dropped.
pub fn thin_qr(m: ArrayView2<'_, f64>, tol: f64) -> QrFactor {
    let n = m.nrows();
    let p = m.ncols();
    let mut cols: Vec<Vec<f64>> = m.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut lead = 0.0_f64;

    for k in 0..n.min(p) {
        let (jmax, best) = (k..p)
            .map(|j| (j, cols[j][k..].iter().map(|v| v * v).sum::<f64>()))
            .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        let norm = best.sqrt();
        if k == 0 {
            lead = norm;
        }
        if norm == 0.0 || norm <= tol * lead {
            break;
        }
        cols.swap(k, jmax);
        perm.swap(k, jmax);

        let mut v: Vec<f64> = cols[k][k..].to_vec();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        let beta = 2.0 / vnorm2;

        cols[k][k] = alpha;
        cols[k][k + 1..].iter_mut().for_each(|x| *x = 0.0);
        for col in cols.iter_mut().skip(k + 1) {
            let tail = &mut col[k..];
            let s = beta * v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum::<f64>();
            tail.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
        }
        reflectors.push((v, beta));
    }

    let rank = reflectors.len();
    let mut r_upper = Array2::zeros((rank, rank));
    for j in 0..rank {
        for i in 0..=j {
            r_upper[[i, j]] = cols[j][i];
        }
    }

    // Q = H_0 H_1 ... H_{r-1} applied to the first r columns of the identity.
    let mut q_cols: Vec<Vec<f64>> = (0..rank)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();
    for (k, (v, beta)) in reflectors.iter().enumerate().rev() {
        for col in q_cols.iter_mut() {
            let tail = &mut col[k..];
            let s = beta * v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum::<f64>();
            if s != 0.0 {
                tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
            }
        }
    }
    let mut q = Array2::zeros((n, rank));
    for (c, col) in q_cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            q[[r, c]] = *v;
        }
    }

    perm.truncate(rank);
    QrFactor {
        q,
        r_upper,
        kept_columns: perm,
        n_cols: p,
    }
}

/// Splits `y` into its projection onto span(q) and the orthogonal residual.
pub fn project(f: &QrFactor, y: ArrayView2<'_, f64>) -> Result<(Matrix, Matrix)> {
    f.check_rows(&y)?;
    let coords = f.q.t().dot(&y);
    let fitted = f.q.dot(&coords);
    let residual = &y - &fitted;
    Ok((fitted, residual))
}

/// Squared Frobenius norms of the projection and the residual, without
/// materializing either matrix.
pub fn projection_energy(f: &QrFactor, y: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    f.check_rows(&y)?;
    let coords = f.q.t().dot(&y);
    let fit = frobenius_sq(coords.view());
    let residual = &y - &f.q.dot(&coords);
    Ok((fit, frobenius_sq(residual.view())))
}

/// Least-squares coefficients on the kept columns; dropped columns get 0.
pub fn ols_solve(f: &QrFactor, y: ArrayView2<'_, f64>) -> Result<Matrix> {
    f.check_rows(&y)?;
    let rank = f.rank();
    let coords = f.q.t().dot(&y);
    let mut out = Array2::zeros((f.n_cols, y.ncols()));
    for c in 0..y.ncols() {
        let mut b = vec![0.0; rank];
        for i in (0..rank).rev() {
            let mut s = coords[[i, c]];
            for (j, bj) in b.iter().enumerate().skip(i + 1) {
                s -= f.r_upper[[i, j]] * bj;
            }
            b[i] = s / f.r_upper[[i, i]];
        }
        for (i, &col) in f.kept_columns.iter().enumerate() {
            out[[col, c]] = b[i];
        }
    }
    Ok(out)
}

/// Copies the listed columns of `m` into a new matrix, in the given order.
pub fn select_columns(m: ArrayView2<'_, f64>, cols: &[usize]) -> Matrix {
    let mut out = Array2::zeros((m.nrows(), cols.len()));
    for (dst, &src) in cols.iter().enumerate() {
        out.column_mut(dst).assign(&m.column(src));
    }
    out
}
