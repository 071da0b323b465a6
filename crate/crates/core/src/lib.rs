//! Block-structured sparse multivariate regression: non-zero block
//! selection by thresholding projection-based R̄² statistics, followed by
//! block-restricted lasso, plus a simulation harness for benchmarking.

pub mod blockmodel;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod simbench;
pub mod solver;

pub use blockmodel::{
    all_block_stats, block_stats, select_threshold, BlockGrid, BlockStats, GroupSpec, IndicatorMatrix, ScreenLambda,
    ScreenMode, ScreenPolicy,
};
pub use error::{Error, Result};
pub use estimators::{
    baseline_fit, nbslasso_fit, single_block_ols, single_block_screened, Baseline, FitResult, Method, NbsConfig,
    Standardization, Step2Config,
};
pub use linalg::{standardize, thin_qr, Matrix, QrFactor, Scaling};
pub use solver::{lasso_cd, LambdaSelection, LassoFit, PenaltySpec};
