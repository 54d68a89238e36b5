//! Bagged regression forest with per-split feature subsampling.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, MaxFeatures, Presorted, RegressionTree, TreeParams};
use super::FeatureMatrix;
use crate::rng::child_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: Some(12),
            min_samples_leaf: 5,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    /// Summed squared-error reduction per feature over all trees.
    raw_importance: Vec<f64>,
}

impl RandomForest {
    pub(crate) fn fit(x: &FeatureMatrix, y: &[f64], params: &ForestParams, seed: u64) -> Self {
        let pre = Presorted::new(x);
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf,
            max_features: params.max_features,
        };
        let n = x.n_rows();
        let grown: Vec<(RegressionTree, Vec<f64>)> = (0..params.n_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = child_rng(seed, &[t as u64]);
                let rows: Vec<u32> = if params.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
                } else {
                    (0..n as u32).collect()
                };
                grow(&pre, y, rows, &tree_params, &mut rng)
            })
            .collect();
        let mut raw_importance = vec![0.0; x.n_features()];
        let mut trees = Vec::with_capacity(grown.len());
        for (tree, imp) in grown {
            for (acc, v) in raw_importance.iter_mut().zip(imp) {
                *acc += v;
            }
            trees.push(tree);
        }
        Self {
            trees,
            raw_importance,
        }
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let k = self.trees.len() as f64;
        (0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                self.trees
                    .iter()
                    .map(|t| t.predict_row(|j| x.value(i, j)))
                    .sum::<f64>()
                    / k
            })
            .collect()
    }

    /// Total impurity reduction per feature, normalised to sum to one.
    pub fn importance(&self) -> Vec<f64> {
        let total: f64 = self.raw_importance.iter().sum();
        let p = self.raw_importance.len();
        if total <= 0.0 {
            return vec![1.0 / p as f64; p];
        }
        self.raw_importance.iter().map(|v| v / total).collect()
    }
}
