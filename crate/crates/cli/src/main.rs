use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blocksel_core::simbench::{aggregate_table, generate, run_benchmark, write_reports_csv, MethodSettings, SimulationSpec};
use blocksel_core::solver::{PathConfig, DEFAULT_FOLDS};
use blocksel_core::{
    all_block_stats, baseline_fit, nbslasso_fit, select_threshold, standardize, Baseline, FitResult, GroupSpec,
    LambdaSelection, Matrix, Method, NbsConfig, PenaltySpec, ScreenPolicy, Standardization, Step2Config,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

mod io;

use io::{indicator_csv, matrix_csv, read_matrix, Outputs};

const DEFAULT_ALPHA: f64 = 0.05;
const DEFAULT_M3: f64 = 4.0;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<blocksel_core::Error> for CliError {
    fn from(e: blocksel_core::Error) -> Self {
        CliError {
            code: if e.is_user_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "blocksel", version, about = "Non-zero block selection and block-sparse multi-response regression")]
struct Cli {
    /// Worker threads (default: all logical cores).
    #[arg(long, env = "BLOCKSEL_THREADS", global = true)]
    threads: Option<usize>,
    /// JSON file with tuning defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select non-zero blocks and write the indicator matrix.
    Select(SelectArgs),
    /// Fit the coefficient matrix.
    Fit(FitArgs),
    /// Generate one simulated data set.
    Simulate(SimulateArgs),
    /// Run replicated simulations and write per-replication and aggregate tables.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Headerless numeric CSV, one row per observation.
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Group spec JSON: {"covariate_sizes": [...], "response_sizes": [...]}.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Comma-separated covariate group sizes, instead of --groups.
    #[arg(long, conflicts_with = "groups", requires = "response_sizes")]
    covariate_sizes: Option<String>,
    #[arg(long, conflicts_with = "groups", requires = "covariate_sizes")]
    response_sizes: Option<String>,
    /// Use X and Y as given instead of centering and scaling columns.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Default)]
struct Tuning {
    #[arg(long)]
    alpha: Option<f64>,
    /// nbslasso, lasso or enet.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long, value_enum)]
    lambda_mode: Option<LambdaMode>,
    /// Penalty level for --lambda-mode fixed.
    #[arg(long)]
    lambda: Option<f64>,
    /// Constant of the theory-rate penalty.
    #[arg(long)]
    m3: Option<f64>,
    /// Elastic-net l1 share.
    #[arg(long)]
    mix: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LambdaMode {
    Cv,
    Fixed,
    Theory,
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    alpha: Option<f64>,
    method: Option<Method>,
    lambda_mode: Option<LambdaMode>,
    lambda: Option<f64>,
    m3: Option<f64>,
    mix: Option<f64>,
    folds: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    tuning: Tuning,
    /// Report coefficients on the original column scales.
    #[arg(long)]
    unstandardize: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Simulation spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Comma-separated methods.
    #[arg(long, default_value = "nbslasso,lasso")]
    methods: String,
    #[arg(long, default_value_t = 1)]
    replications: usize,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

/// Tuning after merging flags, config file and defaults.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    alpha: f64,
    method: Method,
    lambda_mode: LambdaMode,
    lambda: Option<f64>,
    m3: f64,
    mix: f64,
    folds: usize,
    seed: u64,
}

impl Resolved {
    fn new(t: &Tuning, file: &FileConfig) -> Result<Self, CliError> {
        let r = Resolved {
            alpha: t.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            method: t.method.or(file.method).unwrap_or(Method::Nbslasso),
            lambda_mode: t.lambda_mode.or(file.lambda_mode).unwrap_or(LambdaMode::Cv),
            lambda: t.lambda.or(file.lambda),
            m3: t.m3.or(file.m3).unwrap_or(DEFAULT_M3),
            mix: t.mix.or(file.mix).unwrap_or(Baseline::DEFAULT_ENET_MIX),
            folds: t.folds.or(file.folds).unwrap_or(DEFAULT_FOLDS),
            seed: t.seed.or(file.seed).unwrap_or(0),
        };
        if !(r.alpha > 0.0 && r.alpha < 1.0) {
            return Err(CliError::user(format!("--alpha must lie in (0, 1), got {}", r.alpha)));
        }
        if r.lambda_mode == LambdaMode::Fixed && r.lambda.is_none() {
            return Err(CliError::user("--lambda-mode fixed needs --lambda"));
        }
        Ok(r)
    }

    fn step2(&self) -> Step2Config {
        let selection = match self.lambda_mode {
            LambdaMode::Cv => LambdaSelection::CrossValidation {
                folds: self.folds,
                path: PathConfig::default(),
            },
            LambdaMode::Fixed => LambdaSelection::Fixed,
            LambdaMode::Theory => LambdaSelection::TheoryRate { m3: self.m3 },
        };
        Step2Config {
            penalty: PenaltySpec::lasso(self.lambda.unwrap_or(0.0)),
            selection,
            seed: self.seed,
        }
    }

    fn nbs(&self) -> NbsConfig {
        NbsConfig {
            alpha: self.alpha,
            screen: ScreenPolicy::default(),
            step2: self.step2(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

struct Data {
    x: Matrix,
    y: Matrix,
    groups: GroupSpec,
    standardization: Option<Standardization>,
}

fn load_data(args: &DataArgs) -> Result<Data, CliError> {
    let groups = match (&args.groups, &args.covariate_sizes, &args.response_sizes) {
        (Some(path), _, _) => GroupSpec::from_json(&read_text(path)?)?,
        (None, Some(cov), Some(resp)) => GroupSpec::new(GroupSpec::parse_sizes(cov)?, GroupSpec::parse_sizes(resp)?)?,
        _ => return Err(CliError::user("pass --groups or both --covariate-sizes and --response-sizes")),
    };
    let x = read_matrix(&args.x)?;
    let y = read_matrix(&args.y)?;
    if x.nrows() != y.nrows() {
        return Err(CliError::user(format!("X has {} rows but Y has {}", x.nrows(), y.nrows())));
    }
    groups.check_dims(x.ncols(), y.ncols())?;
    if args.raw {
        return Ok(Data {
            x,
            y,
            groups,
            standardization: None,
        });
    }
    let (xs, sx) = standardize(x.view())?;
    let (ys, sy) = standardize(y.view())?;
    Ok(Data {
        x: xs,
        y: ys,
        groups,
        standardization: Some(Standardization { x: sx, y: sy }),
    })
}

#[derive(Serialize)]
struct SelectSummary {
    alpha: f64,
    c_hat: f64,
    gamma_hat: f64,
    num_selected: usize,
    selected: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn empty_note(num_selected: usize, alpha: f64) -> Option<String> {
    (num_selected == 0).then(|| format!("no block passed ER <= {alpha}"))
}

fn cmd_select(args: &SelectArgs, file: &FileConfig) -> Result<Outputs, CliError> {
    let tuning = Tuning {
        alpha: args.alpha,
        ..Default::default()
    };
    let alpha = Resolved::new(&tuning, file)?.alpha;
    let data = load_data(&args.data)?;
    let grid = all_block_stats(data.x.view(), data.y.view(), &data.groups, &ScreenPolicy::default())?;
    let ind = select_threshold(&grid, alpha)?;
    let c_hat = ind.c_hat.unwrap_or(1.0);
    let mut out = Outputs::default();
    out.add("delta.csv", indicator_csv(&ind.delta));
    out.add("r2bar.csv", matrix_csv(&grid.r2bar_matrix()));
    out.add_json(
        "summary.json",
        &SelectSummary {
            alpha,
            c_hat,
            gamma_hat: 1.0 - c_hat,
            num_selected: ind.num_selected(),
            selected: ind.active.clone(),
            note: empty_note(ind.num_selected(), alpha),
        },
    );
    Ok(out)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    method: &'a str,
    tuning: &'a Resolved,
    scale: &'a str,
    num_selected: usize,
    selected: &'a [(usize, usize)],
    #[serde(skip_serializing_if = "Option::is_none")]
    c_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Serialize)]
struct Timing {
    method: String,
    elapsed_seconds: f64,
}

fn run_fit(data: &Data, r: &Resolved) -> Result<FitResult, CliError> {
    let fit = match r.method {
        Method::Nbslasso => nbslasso_fit(data.x.view(), data.y.view(), &data.groups, &r.nbs())?,
        Method::Lasso => baseline_fit(data.x.view(), data.y.view(), &data.groups, Baseline::Lasso, &r.step2())?,
        Method::Enet => baseline_fit(
            data.x.view(),
            data.y.view(),
            &data.groups,
            Baseline::ElasticNet { mix: r.mix },
            &r.step2(),
        )?,
        other => return Err(CliError::user(format!("fit supports nbslasso, lasso and enet, not {other}"))),
    };
    Ok(match &data.standardization {
        Some(s) => fit.with_standardization(s.clone()),
        None => fit,
    })
}

fn cmd_fit(args: &FitArgs, file: &FileConfig) -> Result<Outputs, CliError> {
    let r = Resolved::new(&args.tuning, file)?;
    let data = load_data(&args.data)?;
    let fit = run_fit(&data, &r)?;
    let (coefficients, scale) = match (args.unstandardize, &fit.standardization) {
        (true, Some(_)) => (fit.raw_coefficients(), "original"),
        (false, Some(_)) => (fit.coefficients.clone(), "standardized"),
        (_, None) => (fit.coefficients.clone(), "raw input"),
    };
    let mut out = Outputs::default();
    out.add("coefficients.csv", matrix_csv(&coefficients));
    out.add("delta.csv", indicator_csv(&fit.indicator.delta));
    let lambdas: Vec<String> = fit.lambda_used.iter().map(|l| format!("{l}\n")).collect();
    out.add("lambdas.csv", lambdas.concat());
    if let Some(grid) = &fit.block_stats {
        out.add("r2bar.csv", matrix_csv(&grid.r2bar_matrix()));
    }
    let note = match r.method {
        Method::Nbslasso => empty_note(fit.indicator.num_selected(), r.alpha),
        _ => None,
    };
    out.add_json(
        "summary.json",
        &FitSummary {
            method: r.method.as_str(),
            tuning: &r,
            scale,
            num_selected: fit.indicator.num_selected(),
            selected: &fit.indicator.active,
            c_hat: fit.indicator.c_hat,
            note,
        },
    );
    out.add_json(
        "timing.json",
        &Timing {
            method: r.method.as_str().to_string(),
            elapsed_seconds: fit.elapsed_seconds,
        },
    );
    Ok(out)
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<SimulationSpec, CliError> {
    let mut spec = SimulationSpec::from_json(&read_text(path)?)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Outputs, CliError> {
    let spec = load_spec(&args.spec, args.seed)?;
    let data = generate(&spec)?;
    let mut out = Outputs::default();
    out.add("x_train.csv", matrix_csv(&data.x_train));
    out.add("y_train.csv", matrix_csv(&data.y_train));
    out.add("x_test.csv", matrix_csv(&data.x_test));
    out.add("y_test.csv", matrix_csv(&data.y_test));
    out.add("b_true.csv", matrix_csv(&data.truth.b_true));
    out.add("b_std.csv", matrix_csv(&data.truth.b_std));
    out.add("delta_true.csv", indicator_csv(&data.truth.delta_true.delta));
    out.add("groups.json", data.groups.to_json() + "\n");
    out.add_json("spec.json", &spec);
    Ok(out)
}

fn cmd_benchmark(args: &BenchmarkArgs, file: &FileConfig) -> Result<Outputs, CliError> {
    let r = Resolved::new(&args.tuning, file)?;
    let spec = load_spec(&args.spec, None)?;
    let methods = args
        .methods
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(str::parse::<Method>)
        .collect::<Result<Vec<_>, _>>()?;
    let settings = MethodSettings {
        nbs: r.nbs(),
        enet_mix: r.mix,
    };
    let res = run_benchmark(&spec, &methods, &settings, args.replications, r.seed)?;
    for f in &res.failures {
        log::warn!("replication {} ({:?}) failed: {}", f.replication, f.method, f.message);
    }
    let mut reports = Vec::new();
    write_reports_csv(&mut reports, &res.reports)?;
    let mut out = Outputs::default();
    out.add("replications.csv", reports);
    out.add("table.csv", aggregate_table(&res.aggregates));
    out.add_json("failures.json", &res.failures);
    Ok(out)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::user("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::user(format!("thread pool: {e}")))?;
    }
    let file = load_config(cli.config.as_deref())?;
    let (outputs, dir) = match &cli.command {
        Command::Select(a) => (cmd_select(a, &file)?, &a.data.out),
        Command::Fit(a) => (cmd_fit(a, &file)?, &a.data.out),
        Command::Simulate(a) => (cmd_simulate(a)?, &a.out),
        Command::Benchmark(a) => (cmd_benchmark(a, &file)?, &a.out),
    };
    outputs.commit(dir)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
