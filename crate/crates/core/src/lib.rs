//! Cross-fitted double machine learning for firm-year panels.
//!
//! The crate is organised bottom-up:
//!
//! - [`panel`]: loading, filtering, leading and fixed-effect demeaning of panel data.
//! - [`indicators`]: resilience sub-indicators, the marketization index, mediators and controls.
//! - [`learners`]: nuisance regressors (CART, random forest, boosting, LASSO, MLP).
//! - [`dml`]: naive and cross-fitted estimators, standard errors, bias decomposition.
//! - [`robustness`]: variant suites and regression-table rendering.
//! - [`synthgen`]: synthetic data-generating processes with known effects and the Monte Carlo harness.

pub mod dml;
pub mod error;
pub mod indicators;
pub mod learners;
pub mod panel;
pub mod robustness;
pub mod rng;
pub mod synthgen;

pub use dml::{
    bias_decomposition, cross_fit, dml_theta, naive_theta, run_dml_pipeline, Aggregation,
    BiasDecomposition, CrossFitResult, DmlConfig, DmlDecomposition, DmlResult, DmlRun, FitPath, NaiveDecomposition, SeKind,
};
pub use error::{Error, Result};
pub use learners::{FeatureMatrix, FittedLearner, LearnerKind, LearnerSpec};
pub use panel::{
    ColumnKind, ColumnSpec, FixedEffects, PanelDataset, Role, SampleFilter, SchemaDecl,
};
pub use robustness::{run_suite, regression_table, BaseSpec, RegressionTable, RobustnessSuite, SuiteResults, Variant, VariantKind};
pub use synthgen::{
    generate_panel, monte_carlo, orthogonality_check, DgpSpec, DgpTruth, EstimatorSpec, Family, MonteCarloReport,
    SyntheticPanel,
};
