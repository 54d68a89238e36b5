//! Regression learners used for the nuisance functions, behind one
//! fit/predict interface.
//!
//! All fitting is deterministic given `(spec, X, y, seed)`. Forest trees are
//! grown in parallel with per-tree derived seeds, so results do not depend on
//! the thread count.

pub mod forest;
pub mod gbt;
pub mod lasso;
pub mod mlp;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub use forest::{ForestParams, RandomForest};
pub use gbt::{GbtParams, GradientBoosting};
pub use lasso::{fit_lasso_path, lambda_grid, lambda_max, LassoModel, LassoParams, LassoPath};
pub use mlp::{Mlp, MlpParams};
pub use tree::{MaxFeatures, RegressionTree, TreeParams};

/// Column-major matrix of finite reals with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    n_rows: usize,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("feature matrix needs at least one column"));
        }
        if names.len() != columns.len() {
            return Err(Error::invalid(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n_rows = columns[0].len();
        if n_rows == 0 {
            return Err(Error::invalid("feature matrix needs at least one row"));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::invalid(format!("column `{name}` has {} rows, expected {n_rows}", col.len())));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("column `{name}` has non-finite values")));
            }
        }
        Ok(Self {
            names,
            n_rows,
            columns,
        })
    }

    /// Builds from row vectors.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = names.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged rows"));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::new(names, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            n_rows: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Reorders columns to `names`; errors if the column sets differ.
    pub fn aligned_to(&self, names: &[String]) -> Result<std::borrow::Cow<'_, Self>> {
        if self.names == names {
            return Ok(std::borrow::Cow::Borrowed(self));
        }
        let missing: Vec<String> = names.iter().filter(|n| !self.names.contains(n)).cloned().collect();
        let extra: Vec<String> = self.names.iter().filter(|n| !names.contains(n)).cloned().collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::ColumnMismatch { missing, extra });
        }
        let columns = names
            .iter()
            .map(|n| self.columns[self.names.iter().position(|m| m == n).unwrap()].clone())
            .collect();
        Ok(std::borrow::Cow::Owned(Self {
            names: names.to_vec(),
            n_rows: self.n_rows,
            columns,
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Tree,
    Forest,
    Gbt,
    Lasso,
    Mlp,
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LearnerKind::Tree => "tree",
            LearnerKind::Forest => "forest",
            LearnerKind::Gbt => "gbt",
            LearnerKind::Lasso => "lasso",
            LearnerKind::Mlp => "mlp",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(LearnerKind::Tree),
            "forest" => Ok(LearnerKind::Forest),
            "gbt" => Ok(LearnerKind::Gbt),
            "lasso" => Ok(LearnerKind::Lasso),
            "mlp" => Ok(LearnerKind::Mlp),
            other => Err(Error::invalid(format!(
                "unknown learner `{other}` (expected tree, forest, gbt, lasso or mlp)"
            ))),
        }
    }
}

/// Learner family plus hyperparameters. Seeds are supplied at fit time so a
/// pipeline can derive one per fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LearnerSpec {
    Tree(TreeParams),
    Forest(ForestParams),
    Gbt(GbtParams),
    Lasso(LassoParams),
    Mlp(MlpParams),
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::Forest(ForestParams::default())
    }
}

impl LearnerSpec {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::Tree => LearnerSpec::Tree(TreeParams::default()),
            LearnerKind::Forest => LearnerSpec::Forest(ForestParams::default()),
            LearnerKind::Gbt => LearnerSpec::Gbt(GbtParams::default()),
            LearnerKind::Lasso => LearnerSpec::Lasso(LassoParams::default()),
            LearnerKind::Mlp => LearnerSpec::Mlp(MlpParams::default()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerSpec::Tree(_) => LearnerKind::Tree,
            LearnerSpec::Forest(_) => LearnerKind::Forest,
            LearnerSpec::Gbt(_) => LearnerKind::Gbt,
            LearnerSpec::Lasso(_) => LearnerKind::Lasso,
            LearnerSpec::Mlp(_) => LearnerKind::Mlp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::invalid(format!("{} learner: {msg}", self.kind())));
        match self {
            LearnerSpec::Tree(t) => {
                if t.min_samples_leaf == 0 || t.max_depth == Some(0) {
                    return bad("depth and leaf size must be positive");
                }
            }
            LearnerSpec::Forest(f) => {
                if f.n_trees == 0 || f.min_samples_leaf == 0 || f.max_depth == Some(0) {
                    return bad("trees, depth and leaf size must be positive");
                }
            }
            LearnerSpec::Gbt(g) => {
                if g.max_depth == 0 || g.min_samples_leaf == 0 || !(g.learning_rate > 0.0) {
                    return bad("depth, leaf size and learning rate must be positive");
                }
            }
            LearnerSpec::Lasso(l) => {
                if l.lambda.is_some_and(|v| !(v > 0.0)) || !(l.tol > 0.0) || l.n_lambdas == 0 {
                    return bad("penalty, tolerance and grid size must be positive");
                }
                if !(l.lambda_min_ratio > 0.0 && l.lambda_min_ratio < 1.0) || l.cv_folds < 2 {
                    return bad("lambda_min_ratio must lie in (0, 1) and cv_folds >= 2");
                }
            }
            LearnerSpec::Mlp(m) => {
                if m.hidden == 0 || !(m.learning_rate > 0.0) {
                    return bad("hidden units and learning rate must be positive");
                }
                if !(m.weight_decay >= 0.0) {
                    return bad("weight decay must be non-negative");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Constant(f64),
    Tree(RegressionTree),
    Forest(RandomForest),
    Gbt(GradientBoosting),
    Lasso(LassoModel),
    Mlp(Mlp),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    pub kind: LearnerKind,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub train_mse: f64,
    /// Set when the target had zero variance and a constant predictor was returned.
    pub degenerate: bool,
    pub model: Model,
}

pub fn fit(spec: &LearnerSpec, x: &FeatureMatrix, y: &[f64], seed: u64) -> Result<FittedLearner> {
    spec.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} targets", x.n_rows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::invalid("need at least two observations to fit"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("target has non-finite values"));
    }
    let first = y[0];
    let degenerate = y.iter().all(|&v| v == first);
    let model = if degenerate {
        Model::Constant(first)
    } else {
        match spec {
            LearnerSpec::Tree(params) => {
                Model::Tree(tree::fit_tree(x, y, params, &mut rng_from_seed(seed)).0)
            }
            LearnerSpec::Forest(params) => Model::Forest(RandomForest::fit(x, y, params, seed)),
            LearnerSpec::Gbt(params) => Model::Gbt(GradientBoosting::fit(x, y, params, seed)),
            LearnerSpec::Lasso(params) => Model::Lasso(lasso::fit(x, y, params, seed)?),
            LearnerSpec::Mlp(params) => Model::Mlp(Mlp::fit(x, y, params, seed)),
        }
    };
    let mut fitted = FittedLearner {
        kind: spec.kind(),
        feature_names: x.names().to_vec(),
        seed,
        train_mse: 0.0,
        degenerate,
        model,
    };
    let pred = fitted.predict_aligned(x);
    fitted.train_mse = mse(y, &pred);
    Ok(fitted)
}

pub fn mse(y: &[f64], pred: &[f64]) -> f64 {
    y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
}

impl FittedLearner {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        let x = x.aligned_to(&self.feature_names)?;
        Ok(self.predict_aligned(&x))
    }

    fn predict_aligned(&self, x: &FeatureMatrix) -> Vec<f64> {
        match &self.model {
            Model::Constant(c) => vec![*c; x.n_rows()],
            Model::Tree(t) => t.predict(x),
            Model::Forest(f) => f.predict(x),
            Model::Gbt(g) => g.predict(x),
            Model::Lasso(l) => l.predict(x),
            Model::Mlp(m) => m.predict(x),
        }
    }

    /// Normalised impurity importances of a fitted forest.
    pub fn feature_importance(&self) -> Result<Vec<f64>> {
        match (&self.model, self.kind) {
            (Model::Forest(f), _) => Ok(f.importance()),
            (Model::Constant(_), LearnerKind::Forest) => {
                let p = self.feature_names.len();
                Ok(vec![1.0 / p as f64; p])
            }
            _ => Err(Error::NotAForest(self.kind.to_string())),
        }
    }
}

pub fn predict(model: &FittedLearner, x: &FeatureMatrix) -> Result<Vec<f64>> {
    model.predict(x)
}

pub fn feature_importance(model: &FittedLearner) -> Result<Vec<f64>> {
    model.feature_importance()
}
