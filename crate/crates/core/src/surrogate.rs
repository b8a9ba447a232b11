//! Bagged regression trees over encoded configurations.
//!
//! Predictions return the mean of the per-tree predictions together with their
//! population standard deviation, which the acquisition functions use as the
//! model's uncertainty.

use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Minimum number of samples in each child of a split.
    pub min_leaf: usize,
    /// Features examined per node; `None` means `ceil(d / 3)`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            min_leaf: 3,
            max_features: None,
            bootstrap: true,
            max_depth: None,
        }
    }
}

impl ForestParams {
    fn features_per_node(&self, dim: usize) -> usize {
        self.max_features
            .unwrap_or(dim.div_ceil(3))
            .clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Argument("a tree needs at least one node".into()));
        }
        for n in &nodes {
            if let Node::Split { left, right, .. } = n {
                if *left >= nodes.len() || *right >= nodes.len() {
                    return Err(Error::Argument("split refers to a missing node".into()));
                }
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Samples with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<Tree>,
    dim: usize,
    target_min: f64,
    target_max: f64,
    seed: u64,
}

/// Best axis-aligned split of the samples `idx` on `feature`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Summed squared deviation from the child means.
    pub cost: f64,
}

/// Scan the midpoints between consecutive distinct values of `feature`, keeping
/// the first threshold of minimal child sum of squared deviations. Each child
/// must hold at least `min_leaf` samples.
pub fn best_split_on(
    xs: &[Vec<f64>],
    ys: &[f64],
    idx: &[usize],
    feature: usize,
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = idx.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]));
    let total_sum: f64 = order.iter().map(|&i| ys[i]).sum();
    let total_sq: f64 = order.iter().map(|&i| ys[i] * ys[i]).sum();
    let mut left_sum = 0.0;
    let mut left_sq = 0.0;
    let mut best: Option<SplitChoice> = None;
    for k in 0..n - 1 {
        let y = ys[order[k]];
        left_sum += y;
        left_sq += y * y;
        let n_left = k + 1;
        let n_right = n - n_left;
        let lo = xs[order[k]][feature];
        let hi = xs[order[k + 1]][feature];
        if n_left < min_leaf || n_right < min_leaf || lo == hi {
            continue;
        }
        let right_sum = total_sum - left_sum;
        let right_sq = total_sq - left_sq;
        let cost = (left_sq - left_sum * left_sum / n_left as f64).max(0.0)
            + (right_sq - right_sum * right_sum / n_right as f64).max(0.0);
        if best.is_none_or(|b| cost < b.cost) {
            let mut threshold = (lo + hi) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            best = Some(SplitChoice {
                feature,
                threshold,
                cost,
            });
        }
    }
    best
}

struct Builder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    params: &'a ForestParams,
    n_features: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &i in idx {
            let y = self.ys[i];
            lo = lo.min(y);
            hi = hi.max(y);
            sum += y;
        }
        (sum / idx.len() as f64).clamp(lo, hi)
    }

    fn build<R: Rng>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&idx),
        });
        let first = self.ys[idx[0]];
        let constant = idx.iter().all(|&i| self.ys[i] == first);
        let depth_left = self.params.max_depth.is_none_or(|d| depth < d);
        if constant || !depth_left || idx.len() < 2 * self.params.min_leaf.max(1) {
            return at;
        }
        let dim = self.xs[0].len();
        let mut candidates = index::sample(rng, dim, self.n_features).into_vec();
        candidates.sort_unstable();
        let mut best: Option<SplitChoice> = None;
        for f in candidates {
            if let Some(s) = best_split_on(self.xs, self.ys, &idx, f, self.params.min_leaf) {
                if best.is_none_or(|b| s.cost < b.cost) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else {
            return at;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.xs[i][split.feature] <= split.threshold);
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

fn fit_tree(xs: &[Vec<f64>], ys: &[f64], params: &ForestParams, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ys.len();
    let idx: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut b = Builder {
        xs,
        ys,
        params,
        n_features: params.features_per_node(xs[0].len()),
        nodes: Vec::new(),
    };
    b.build(idx, 0, &mut rng);
    Tree { nodes: b.nodes }
}

/// Fit a forest on `(features, target)` pairs. Deterministic per seed.
pub fn fit(records: &[(Vec<f64>, f64)], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if records.is_empty() {
        return Err(Error::Argument(
            "cannot fit a forest on zero records".into(),
        ));
    }
    if params.n_trees == 0 {
        return Err(Error::Argument("n_trees must be at least 1".into()));
    }
    let dim = records[0].0.len();
    if dim == 0 || records.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::Shape(
            "feature vectors must share a non-zero length".into(),
        ));
    }
    if records
        .iter()
        .any(|(x, y)| !y.is_finite() || x.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numeric("non-finite training record".into()));
    }
    let xs: Vec<Vec<f64>> = records.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<f64> = records.iter().map(|(_, y)| *y).collect();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(&xs, &ys, params, derive_seed(seed, t as u64)))
        .collect();
    Ok(ForestModel {
        trees,
        dim,
        target_min: ys.iter().copied().fold(f64::INFINITY, f64::min),
        target_max: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        seed,
    })
}

impl ForestModel {
    /// Assemble a model from hand-built trees.
    pub fn from_trees(trees: Vec<Tree>, dim: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Argument("a forest needs at least one tree".into()));
        }
        let leaves = trees.iter().flat_map(|t| {
            t.nodes.iter().filter_map(|n| match n {
                Node::Leaf { value } => Some(*value),
                Node::Split { .. } => None,
            })
        });
        let (lo, hi) = leaves.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        Ok(Self {
            trees,
            dim,
            target_min: lo,
            target_max: hi,
            seed: 0,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target_range(&self) -> (f64, f64) {
        (self.target_min, self.target_max)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `(mean, spread)`: the average per-tree prediction and the population
    /// standard deviation across trees.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has {} features, model expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> (f64, f64) {
        let n = self.trees.len() as f64;
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        for &p in &preds {
            lo = lo.min(p);
            hi = hi.max(p);
            sum += p;
        }
        let mean = (sum / n).clamp(lo, hi);
        let var = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Text dump, one node per line: `tree node split feature threshold left right`
    /// or `tree node leaf value`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# forest trees={} dim={} seed={}",
            self.trees.len(),
            self.dim,
            self.seed
        );
        for (t, tree) in self.trees.iter().enumerate() {
            for (k, node) in tree.nodes.iter().enumerate() {
                let _ = match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => writeln!(out, "{t} {k} split {feature} {threshold:e} {left} {right}"),
                    Node::Leaf { value } => writeln!(out, "{t} {k} leaf {value:e}"),
                };
            }
        }
        out
    }
}
