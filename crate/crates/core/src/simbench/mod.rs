//! Synthetic block-sparse data, the nine-metric evaluation, and a seeded
//! replication runner.

mod generate;
mod metrics;
mod runner;
mod spec;

pub use generate::{generate, GroundTruth, SimData};
pub use metrics::{evaluate, MetricsReport};
pub use runner::{
    aggregate, aggregate_table, run_benchmark, write_reports_csv, AggregateRow, BenchmarkResult, MeanSd, MethodSettings,
    ReplicationFailure, TABLE_HEADER,
};
pub use spec::{CoefLaw, GroupSetting, KjLaw, SimulationSpec, TestSet};
