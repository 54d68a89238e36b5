//! CART regression trees with variance-reduction splits.
//!
//! Split search works on per-feature dense ranks computed once per training
//! matrix ([`Presorted`]), so a forest or boosting run sorts the raw values a
//! single time and each node only sorts integer keys.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Count(usize),
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> usize {
        let k = match self {
            MaxFeatures::All => p,
            MaxFeatures::Sqrt => (p as f64).sqrt().floor() as usize,
            MaxFeatures::Count(k) => k,
            MaxFeatures::Fraction(f) => (f * p as f64).round() as usize,
        };
        k.clamp(1, p.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 5,
            max_features: MaxFeatures::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Leaf { value: f64 },
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row(*feature as usize) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .map(|i| self.predict_row(|j| x.value(i, j)))
            .collect()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Dense per-feature ranks of a training matrix.
pub(crate) struct Presorted {
    ranks: Vec<Vec<u32>>,
    /// Distinct sorted values per feature, indexed by rank.
    values: Vec<Vec<f64>>,
}

impl Presorted {
    pub(crate) fn new(x: &FeatureMatrix) -> Self {
        let n = x.n_rows();
        let mut ranks = Vec::with_capacity(x.n_features());
        let mut values = Vec::with_capacity(x.n_features());
        for j in 0..x.n_features() {
            let col = x.column(j);
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_unstable_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let mut rank = vec![0u32; n];
            let mut distinct: Vec<f64> = Vec::new();
            for &i in &order {
                let v = col[i as usize];
                if distinct.last() != Some(&v) {
                    distinct.push(v);
                }
                rank[i as usize] = (distinct.len() - 1) as u32;
            }
            ranks.push(rank);
            values.push(distinct);
        }
        Self { ranks, values }
    }

    fn n_features(&self) -> usize {
        self.ranks.len()
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    rank_left: u32,
    rank_right: u32,
}

struct Builder<'a> {
    pre: &'a Presorted,
    y: &'a [f64],
    params: &'a TreeParams,
    mtry: usize,
    rng: &'a mut Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
    keys: Vec<u64>,
}

impl Builder<'_> {
    fn build(&mut self, rows: &mut [u32], depth: usize) -> u32 {
        let n = rows.len();
        let (sum, sumsq) = rows.iter().fold((0.0, 0.0), |(s, q), &r| {
            let v = self.y[r as usize];
            (s + v, q + v * v)
        });
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { value: sum / n as f64 });

        let sse = sumsq - sum * sum / n as f64;
        let min_leaf = self.params.min_samples_leaf.max(1);
        if self.params.max_depth.is_some_and(|d| depth >= d)
            || n < 2 * min_leaf
            || sse <= 1e-12 * sumsq.max(f64::MIN_POSITIVE)
        {
            return id;
        }

        let Some(best) = self.best_split(rows, sum, min_leaf) else {
            return id;
        };
        if best.gain <= 1e-10 * sse {
            return id;
        }

        let ranks = &self.pre.ranks[best.feature];
        let mut n_left = 0;
        for i in 0..n {
            if ranks[rows[i] as usize] <= best.rank_left {
                rows.swap(i, n_left);
                n_left += 1;
            }
        }
        let values = &self.pre.values[best.feature];
        let (lo, hi) = (values[best.rank_left as usize], values[best.rank_right as usize]);
        let mut threshold = lo + (hi - lo) / 2.0;
        if threshold >= hi {
            threshold = lo;
        }
        self.importance[best.feature] += best.gain;

        let (left_rows, right_rows) = rows.split_at_mut(n_left);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: best.feature as u32,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, rows: &[u32], sum: f64, min_leaf: usize) -> Option<Candidate> {
        let n = rows.len();
        let p = self.pre.n_features();
        let features = index::sample(self.rng, p, self.mtry);
        let parent = sum * sum / n as f64;
        let mut best: Option<Candidate> = None;
        for f in features.iter() {
            let ranks = &self.pre.ranks[f];
            self.keys.clear();
            self.keys
                .extend(rows.iter().map(|&r| (u64::from(ranks[r as usize]) << 32) | u64::from(r)));
            self.keys.sort_unstable();
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                let key = self.keys[i];
                left_sum += self.y[(key & 0xFFFF_FFFF) as usize];
                let n_left = i + 1;
                if n_left < min_leaf {
                    continue;
                }
                if n - n_left < min_leaf {
                    break;
                }
                let (rank, next) = ((key >> 32) as u32, (self.keys[i + 1] >> 32) as u32);
                if rank == next {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64
                    - parent;
                if best.as_ref().map_or(true, |b| gain > b.gain) {
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        rank_left: rank,
                        rank_right: next,
                    });
                }
            }
        }
        best
    }
}

/// Grows one tree on `rows` (which may repeat, for bootstrap samples).
/// Returns the tree and its per-feature squared-error reduction.
pub(crate) fn grow(
    pre: &Presorted,
    y: &[f64],
    mut rows: Vec<u32>,
    params: &TreeParams,
    rng: &mut Rng,
) -> (RegressionTree, Vec<f64>) {
    let p = pre.n_features();
    let mut builder = Builder {
        pre,
        y,
        params,
        mtry: params.max_features.resolve(p),
        rng,
        nodes: Vec::new(),
        importance: vec![0.0; p],
        keys: Vec::with_capacity(rows.len()),
    };
    builder.build(&mut rows, 0);
    let Builder {
        nodes, importance, ..
    } = builder;
    (RegressionTree { nodes }, importance)
}

pub(crate) fn fit_tree(
    x: &FeatureMatrix,
    y: &[f64],
    params: &TreeParams,
    rng: &mut Rng,
) -> (RegressionTree, Vec<f64>) {
    let pre = Presorted::new(x);
    grow(&pre, y, (0..x.n_rows() as u32).collect(), params, rng)
}
