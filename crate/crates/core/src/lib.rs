//! Incremental profit per conversion (IPC) uplift estimation.
//!
//! The crate bundles the converted-data-only IPC response transformation,
//! the comparison estimators it is benchmarked against, a least-squares
//! gradient boosting learner shared by all of them, a synthetic discount
//! coupon campaign generator and a profit Qini evaluation harness.

pub mod boosting;
pub mod data_model;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod synthetic;
pub mod transforms;

pub use boosting::{fit_gbm, fit_tree, GbmConfig, GbmModel, RegressionTree};
pub use data_model::{
    converted_subset, load_csv, make_folds, make_holdout, validate, FoldAssignment, UpliftDataset,
    UpliftRow, Violation,
};
pub use error::{Result, UpliftError};
pub use estimators::{fit_crvtw, fit_ipc, fit_meta, fit_rdt, fit_retrospective, MetaKind, Method, RetroMode, Scorer};
pub use transforms::{crvtw_transform, ipc_transform, rdt_targets, TransformedSet};
pub use evaluation::{
    qini_coefficient, qini_curve, random_null, run_benchmark, BenchMethod, BenchReport, QiniCurve, QiniPoint, Split,
};
pub use synthetic::{generate_campaign, CampaignConfig, GroundTruth, OracleKind};
