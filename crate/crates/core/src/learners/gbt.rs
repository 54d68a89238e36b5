//! Least-squares gradient boosting with shallow CART base learners.

use serde::{Deserialize, Serialize};

use super::tree::{grow, MaxFeatures, Presorted, RegressionTree, TreeParams};
use super::FeatureMatrix;
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    init: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl GradientBoosting {
    pub(crate) fn fit(x: &FeatureMatrix, y: &[f64], params: &GbtParams, seed: u64) -> Self {
        let n = y.len();
        let init = y.iter().sum::<f64>() / n as f64;
        let mut fitted = vec![init; n];
        let pre = Presorted::new(x);
        let tree_params = TreeParams {
            max_depth: Some(params.max_depth),
            min_samples_leaf: params.min_samples_leaf,
            max_features: MaxFeatures::All,
        };
        // Feature order is shuffled per split even with all features, which only
        // affects tie-breaking between equally good splits.
        let mut rng = rng_from_seed(seed);
        let mut trees = Vec::with_capacity(params.n_rounds);
        let mut residual = vec![0.0; n];
        for _ in 0..params.n_rounds {
            for ((r, yi), fi) in residual.iter_mut().zip(y).zip(&fitted) {
                *r = yi - fi;
            }
            let (tree, _) = grow(&pre, &residual, (0..n as u32).collect(), &tree_params, &mut rng);
            for (i, f) in fitted.iter_mut().enumerate() {
                *f += params.learning_rate * tree.predict_row(|j| x.value(i, j));
            }
            trees.push(tree);
        }
        Self {
            init,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    pub fn n_rounds(&self) -> usize {
        self.trees.len()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .map(|i| {
                self.init
                    + self.learning_rate
                        * self
                            .trees
                            .iter()
                            .map(|t| t.predict_row(|j| x.value(i, j)))
                            .sum::<f64>()
            })
            .collect()
    }
}
