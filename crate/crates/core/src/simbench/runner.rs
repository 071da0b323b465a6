use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate, SimData};
use super::metrics::{evaluate, MetricsReport};
use super::spec::SimulationSpec;
use crate::error::{Error, Result};
use crate::estimators::{baseline_fit, nbslasso_fit, Baseline, FitResult, Method, NbsConfig};

/// Column header of the aggregate table.
pub const TABLE_HEADER: &str = "Sparsity,Method,TestMSE,Precision,Recall,L1,L2,PDR,FDR,Time(s)";

/// Estimator settings shared across replications. The second-step seed is
/// replaced by the replication seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    pub nbs: NbsConfig,
    pub enet_mix: f64,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            nbs: NbsConfig::default(),
            enet_mix: Baseline::DEFAULT_ENET_MIX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub method: Option<Method>,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }

    fn cell(&self) -> String {
        format!("{:.2}({:.2})", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sparsity_level: f64,
    pub method: Method,
    pub count: usize,
    pub test_mse: MeanSd,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub l1: MeanSd,
    pub l2: MeanSd,
    pub pdr: MeanSd,
    pub fdr: MeanSd,
    pub nne: MeanSd,
    pub time_seconds: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    /// Ordered by replication, then by method in request order.
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<ReplicationFailure>,
    pub aggregates: Vec<AggregateRow>,
}

fn fit_method(data: &SimData, method: Method, settings: &MethodSettings, seed: u64) -> Result<FitResult> {
    let mut nbs = settings.nbs;
    nbs.step2.seed = seed;
    let (x, y) = (data.x_train.view(), data.y_train.view());
    match method {
        Method::Nbslasso => nbslasso_fit(x, y, &data.groups, &nbs),
        Method::Lasso => baseline_fit(x, y, &data.groups, Baseline::Lasso, &nbs.step2),
        Method::Enet => baseline_fit(
            x,
            y,
            &data.groups,
            Baseline::ElasticNet { mix: settings.enet_mix },
            &nbs.step2,
        ),
        other => Err(Error::Config(format!("method {other} is not available in benchmarks"))),
    }
}

type RepOutcome = (Vec<MetricsReport>, Vec<ReplicationFailure>);

fn run_replication(spec: &SimulationSpec, methods: &[Method], settings: &MethodSettings, r: usize, seed: u64) -> RepOutcome {
    let rep_spec = SimulationSpec { seed, ..spec.clone() };
    let data = match generate(&rep_spec) {
        Ok(d) => d,
        Err(e) => {
            let fail = ReplicationFailure {
                replication: r,
                method: None,
                message: e.to_string(),
            };
            return (Vec::new(), vec![fail]);
        }
    };
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &method in methods {
        let outcome = fit_method(&data, method, settings, seed)
            .and_then(|fit| evaluate(&fit, &data.truth, &data.x_test, &data.y_test));
        match outcome {
            Ok(mut report) => {
                report.replication = r;
                report.sparsity_level = spec.sparsity_level;
                reports.push(report);
            }
            Err(e) => {
                log::warn!("replication {r}, {method}: {e}");
                failures.push(ReplicationFailure {
                    replication: r,
                    method: Some(method),
                    message: e.to_string(),
                });
            }
        }
    }
    (reports, failures)
}

/// Runs `replications` independent data sets; replication `r` uses seed
/// `base_seed + r` for both data and cross-validation folds. Failed
/// replications are recorded and skipped.
pub fn run_benchmark(
    spec: &SimulationSpec,
    methods: &[Method],
    settings: &MethodSettings,
    replications: usize,
    base_seed: u64,
) -> Result<BenchmarkResult> {
    if replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    spec.validate()?;
    let outcomes: Vec<RepOutcome> = (0..replications)
        .into_par_iter()
        .map(|r| run_replication(spec, methods, settings, r, base_seed.wrapping_add(r as u64)))
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (rep, fail) in outcomes {
        reports.extend(rep);
        failures.extend(fail);
    }
    let aggregates = aggregate(&reports);
    Ok(BenchmarkResult {
        reports,
        failures,
        aggregates,
    })
}

/// Mean and sd per (sparsity, method), in order of first appearance.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut keys: Vec<(f64, Method)> = Vec::new();
    for r in reports {
        if !keys.iter().any(|&(s, m)| s == r.sparsity_level && m == r.method) {
            keys.push((r.sparsity_level, r.method));
        }
    }
    keys.into_iter()
        .map(|(sparsity_level, method)| {
            let group: Vec<&MetricsReport> = reports
                .iter()
                .filter(|r| r.sparsity_level == sparsity_level && r.method == method)
                .collect();
            let stat = |f: fn(&MetricsReport) -> f64| MeanSd::of(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                sparsity_level,
                method,
                count: group.len(),
                test_mse: stat(|r| r.test_mse),
                precision: stat(|r| r.precision),
                recall: stat(|r| r.recall),
                l1: stat(|r| r.l1),
                l2: stat(|r| r.l2),
                pdr: stat(|r| r.pdr),
                fdr: stat(|r| r.fdr),
                nne: stat(|r| r.nne as f64),
                time_seconds: stat(|r| r.time_seconds),
            }
        })
        .collect()
}

/// Aggregate rows as CSV with `mean(sd)` cells.
pub fn aggregate_table(rows: &[AggregateRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        let cells = [
            format!("{}", r.sparsity_level),
            r.method.display_name().to_string(),
            r.test_mse.cell(),
            r.precision.cell(),
            r.recall.cell(),
            r.l1.cell(),
            r.l2.cell(),
            r.pdr.cell(),
            r.fdr.cell(),
            r.time_seconds.cell(),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One CSV row per replication × method.
pub fn write_reports_csv<W: Write>(writer: W, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(r).map_err(|e| Error::Config(format!("writing reports: {e}")))?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing reports: {e}")))?;
    Ok(())
}
