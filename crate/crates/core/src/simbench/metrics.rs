use serde::{Deserialize, Serialize};

use super::generate::GroundTruth;
use crate::error::{Error, Result};
use crate::estimators::{FitResult, Method};
use crate::linalg::Matrix;

/// Evaluation of one fit against the truth. Coefficient errors are measured
/// on the standardized training scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub replication: usize,
    pub method: Method,
    pub sparsity_level: f64,
    pub test_mse: f64,
    pub precision: f64,
    pub recall: f64,
    pub l1: f64,
    pub l2: f64,
    pub pdr: f64,
    pub fdr: f64,
    pub nne: usize,
    pub time_seconds: f64,
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(fit: &FitResult, truth: &GroundTruth, x_test: &Matrix, y_test: &Matrix) -> Result<MetricsReport> {
    let b = &fit.coefficients;
    if b.dim() != truth.b_std.dim() || x_test.ncols() != b.nrows() || y_test.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "estimate {:?}, truth {:?}, test X {:?}, test Y {:?}",
            b.dim(),
            truth.b_std.dim(),
            x_test.dim(),
            y_test.dim()
        )));
    }
    let resid = y_test - &x_test.dot(b);
    let test_mse = resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64;

    let est = &fit.indicator.delta;
    let tru = &truth.delta_true.delta;
    let selected = est.iter().filter(|&&d| d).count();
    let relevant = tru.iter().filter(|&&d| d).count();
    let hits = est.iter().zip(tru).filter(|(&e, &t)| e && t).count();

    let diff = b - &truth.b_std;
    let l1 = diff.iter().map(|v| v.abs()).sum::<f64>();
    let l2 = diff.iter().map(|v| v * v).sum::<f64>().sqrt();

    let nne = b.iter().filter(|&&v| v != 0.0).count();
    let recovered = truth.nonzero_entries.iter().filter(|&&idx| b[idx] != 0.0).count();
    let false_pos = b
        .indexed_iter()
        .filter(|&(idx, &v)| v != 0.0 && truth.b_true[idx] == 0.0)
        .count();

    Ok(MetricsReport {
        replication: 0,
        method: fit.method,
        sparsity_level: 0.0,
        test_mse,
        precision: ratio(hits, selected, 1.0),
        recall: ratio(hits, relevant, 1.0),
        l1,
        l2,
        pdr: ratio(recovered, truth.nonzero_entries.len(), 1.0),
        fdr: ratio(false_pos, nne, 0.0),
        nne,
        time_seconds: fit.elapsed_seconds,
    })
}
