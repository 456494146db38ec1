//! Random forest of CART trees grown on Gini impurity.
//!
//! Each tree sees a bootstrap resample of the rows and, at every node, a
//! random subset of candidate features. Thresholds are midpoints between
//! consecutive distinct values; rows with `x <= threshold` go left.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_shape, LabelVector, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        /// Fraction of asleep rows reaching the leaf.
        value: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        /// `n * gini(node) - n_l * gini(left) - n_r * gini(right)`.
        impurity_decrease: f64,
    },
}

/// Flat node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &dyn Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row(*feature) <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub column_names: Vec<String>,
    pub trees: Vec<Tree>,
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    pub max_depth: usize,
    pub features_per_split: usize,
    pub rng_seed: u64,
}

fn gini(n0: f64, n1: f64) -> f64 {
    let n = n0 + n1;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (n0 / n, n1 / n);
    1.0 - p0 * p0 - p1 * p1
}

struct Builder<'a> {
    columns: Vec<&'a [f64]>,
    labels: &'a [u8],
    min_leaf: usize,
    max_depth: usize,
    mtry: usize,
    nodes: Vec<Node>,
    // scratch buffer reused across nodes
    pairs: Vec<(f64, u8)>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, n1: usize, n: usize) -> usize {
        self.nodes.push(Node::Leaf {
            value: n1 as f64 / n as f64,
            n_samples: n,
        });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let n = rows.len();
        let n1_total = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        let parent = n as f64 * gini((n - n1_total) as f64, n1_total as f64);

        let mut order: Vec<usize> = (0..self.columns.len()).collect();
        order.shuffle(rng);
        let mut visited = 0;
        let mut best: Option<BestSplit> = None;
        for f in order {
            if visited == self.mtry {
                break;
            }
            let col = self.columns[f];
            self.pairs.clear();
            self.pairs
                .extend(rows.iter().map(|&r| (col[r], self.labels[r])));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if self.pairs[0].0 == self.pairs[n - 1].0 {
                // constant features do not count toward mtry
                continue;
            }
            visited += 1;

            let mut left1 = 0usize;
            for k in 0..n - 1 {
                left1 += usize::from(self.pairs[k].1);
                let (v, next) = (self.pairs[k].0, self.pairs[k + 1].0);
                let n_left = k + 1;
                let n_right = n - n_left;
                if v == next || n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let right1 = n1_total - left1;
                let gain = parent
                    - n_left as f64 * gini((n_left - left1) as f64, left1 as f64)
                    - n_right as f64 * gini((n_right - right1) as f64, right1 as f64);
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (v + next);
                    // adjacent floats: the midpoint may round up to `next`
                    let threshold = if mid < next { mid } else { v };
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let n1 = rows.iter().filter(|&&r| self.labels[r] == 1).count();
        if n1 == 0 || n1 == n || depth >= self.max_depth || n < 2 * self.min_leaf {
            return self.leaf(n1, n);
        }
        let Some(split) = self.best_split(rows, rng) else {
            return self.leaf(n1, n);
        };
        let col = self.columns[split.feature];
        // stable partition keeps row order deterministic
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| col[r] <= split.threshold);

        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: 0.0,
            n_samples: 0,
        });
        let l = self.grow(&mut left, depth + 1, rng);
        let r = self.grow(&mut right, depth + 1, rng);
        self.nodes[idx] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
            n_samples: n,
            impurity_decrease: split.gain.max(0.0),
        };
        idx
    }
}

fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index as u64);
    rng
}

/// Trains `n_estimators` trees, in parallel, each with its own RNG stream
/// derived from `(rng_seed, tree_index)`.
pub fn train_forest(x: &FeatureMatrix, y: &LabelVector, cfg: &TrainConfig) -> Result<ForestModel> {
    cfg.validate()?;
    check_training_shape(x, y)?;
    if x.n_cols() == 0 {
        return Err(Error::Invalid(
            "training matrix has no feature columns".into(),
        ));
    }
    let d = x.n_cols();
    let mtry = cfg
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);
    let n = x.n_rows();
    let columns: Vec<&[f64]> = x.columns.iter().map(Vec::as_slice).collect();

    let trees: Vec<Tree> = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.rng_seed, t);
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            rows.sort_unstable();
            let mut b = Builder {
                columns: columns.clone(),
                labels: &y.values,
                min_leaf: cfg.min_samples_leaf,
                max_depth: cfg.max_depth,
                mtry,
                nodes: Vec::new(),
                pairs: Vec::with_capacity(n),
            };
            b.grow(&mut rows, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();

    Ok(ForestModel {
        column_names: x.column_names.clone(),
        trees,
        n_estimators: cfg.n_estimators,
        min_samples_leaf: cfg.min_samples_leaf,
        max_depth: cfg.max_depth,
        features_per_split: mtry,
        rng_seed: cfg.rng_seed,
    })
}

/// Mean leaf value across trees for every row.
pub fn predict_proba_forest(model: &ForestModel, x: &FeatureMatrix) -> Result<Vec<f64>> {
    let cols = x.aligned_to(&model.column_names)?;
    if model.trees.is_empty() {
        return Err(Error::Model("forest has no trees".into()));
    }
    let k = model.trees.len() as f64;
    Ok((0..x.n_rows())
        .into_par_iter()
        .with_min_len(1024)
        .map(|r| {
            let row = |f: usize| cols[f][r];
            model.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / k
        })
        .collect())
}

/// Impurity-decrease importance per feature, normalized to sum to one
/// (all zeros when no tree has a split).
pub fn feature_importance(model: &ForestModel) -> Vec<(String, f64)> {
    let mut total = vec![0.0; model.column_names.len()];
    for tree in &model.trees {
        for node in &tree.nodes {
            if let Node::Split {
                feature,
                impurity_decrease,
                ..
            } = node
            {
                total[*feature] += impurity_decrease;
            }
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        total.iter_mut().for_each(|v| *v /= sum);
    }
    model.column_names.iter().cloned().zip(total).collect()
}
