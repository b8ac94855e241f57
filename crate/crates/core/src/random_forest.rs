//! Bagged Gini decision trees, the top-layer classifier.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::math::DenseMatrix;
use crate::tree::{improves, midpoint, DecisionTree, Node};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per node; `None` means `ceil(sqrt(n_features))`.
    pub m_try: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            m_try: None,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_samples_leaf == 0 || self.m_try == Some(0) {
            return Err(Error::Config(
                "rf n_trees, min_samples_leaf and m_try must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn resolved_m_try(&self, n_features: usize) -> usize {
        self.m_try
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfModel {
    trees: Vec<DecisionTree>,
    tree_seeds: Vec<u64>,
    m_try: usize,
    n_op: usize,
}

impl RfModel {
    pub fn new(trees: Vec<DecisionTree>, tree_seeds: Vec<u64>, m_try: usize, n_op: usize) -> Result<Self> {
        if trees.is_empty() || tree_seeds.len() != trees.len() {
            return Err(Error::Precondition(
                "forest needs one seed per tree and at least one tree".into(),
            ));
        }
        if let Some(f) = trees.iter().filter_map(DecisionTree::max_feature).max() {
            if f >= n_op {
                return Err(Error::dimension("rf split feature", n_op, f + 1));
            }
        }
        Ok(Self {
            trees,
            tree_seeds,
            m_try,
            n_op,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn tree_seeds(&self) -> &[u64] {
        &self.tree_seeds
    }

    pub fn m_try(&self) -> usize {
        self.m_try
    }

    pub fn n_op(&self) -> usize {
        self.n_op
    }

    /// Mean over trees of the class-1 fraction of the reached leaf.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_op {
            return Err(Error::dimension("rf input", self.n_op, x.len()));
        }
        let total: f64 = self.trees.iter().map(|t| t.leaf(x).0).sum();
        Ok(total / self.trees.len() as f64)
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.usize(self.n_op).usize(self.m_try).usize(self.trees.len());
        for (t, &s) in self.trees.iter().zip(&self.tree_seeds) {
            e.u64_bits(s);
            t.encode(e);
        }
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let n_op = d.usize()?;
        let m_try = d.usize()?;
        let n = d.usize()?;
        let mut trees = Vec::with_capacity(n.min(1 << 16));
        let mut seeds = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            seeds.push(d.u64_bits()?);
            trees.push(DecisionTree::decode(d)?);
        }
        Self::new(trees, seeds, m_try, n_op).map_err(|e| match e {
            Error::Dimension { .. } => e,
            other => d.error(other.to_string()),
        })
    }
}

/// `n` row indices drawn with replacement.
pub fn bootstrap_indices(n: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed_value);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

pub fn train_rf(x: &DenseMatrix, y: &[bool], params: &RfParams, seed_value: u64) -> Result<RfModel> {
    params.validate()?;
    let n = x.rows();
    if y.len() != n {
        return Err(Error::dimension("rf labels", n, y.len()));
    }
    if n < 2 {
        return Err(Error::Training("rf needs at least two rows".into()));
    }
    let positives = y.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::Training("rf needs both classes present".into()));
    }
    if !x.is_finite() {
        return Err(Error::Data("rf input contains non-finite values".into()));
    }
    let m_try = params.resolved_m_try(x.cols());
    let seeds: Vec<u64> = (0..params.n_trees)
        .map(|i| seed::derive_indexed(seed_value, "rf-tree", i as u64))
        .collect();
    let trees: Vec<DecisionTree> = seeds
        .par_iter()
        .map(|&s| {
            let rows = if params.bootstrap {
                bootstrap_indices(n, s)
            } else {
                (0..n).collect()
            };
            grow_tree(x, y, rows, params, m_try, seed::derive_seed(s, "features"))
        })
        .collect();
    RfModel::new(trees, seeds, m_try, x.cols())
}

fn gini_weighted(n: usize, pos: usize) -> f64 {
    // n * gini = n * (1 - p^2 - q^2) = 2 pos (n - pos) / n
    if n == 0 {
        0.0
    } else {
        2.0 * pos as f64 * (n - pos) as f64 / n as f64
    }
}

struct Split {
    feature: usize,
    threshold: f64,
}

fn grow_tree(
    x: &DenseMatrix,
    y: &[bool],
    rows: Vec<usize>,
    params: &RfParams,
    m_try: usize,
    feature_seed: u64,
) -> DecisionTree {
    let mut rng = seed::rng(feature_seed);
    let mut nodes = Vec::new();
    let mut scratch = Vec::with_capacity(rows.len());
    // (node id, rows, depth); depth-first, left child first
    let mut stack = vec![(0usize, rows, 0usize)];
    nodes.push(Node::Leaf { value: 0.0, ordinal: 0 });
    while let Some((id, rows, depth)) = stack.pop() {
        let pos = rows.iter().filter(|&&i| y[i]).count();
        let value = pos as f64 / rows.len() as f64;
        let can_split =
            depth < params.max_depth && pos > 0 && pos < rows.len() && rows.len() >= 2 * params.min_samples_leaf;
        let split = if can_split {
            let mut features = index::sample(&mut rng, x.cols(), m_try).into_vec();
            features.sort_unstable();
            best_split(x, y, &rows, pos, &features, params.min_samples_leaf, &mut scratch)
        } else {
            None
        };
        match split {
            None => nodes[id] = Node::Leaf { value, ordinal: 0 },
            Some(s) => {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| x.get(i, s.feature) <= s.threshold);
                let l = nodes.len();
                nodes.push(Node::Leaf { value: 0.0, ordinal: 0 });
                nodes.push(Node::Leaf { value: 0.0, ordinal: 0 });
                nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: l,
                    right: l + 1,
                };
                stack.push((l + 1, right, depth + 1));
                stack.push((l, left, depth + 1));
            }
        }
    }
    DecisionTree::from_nodes(nodes)
}

/// Largest Gini decrease over `features` (ascending) and their midpoints.
fn best_split(
    x: &DenseMatrix,
    y: &[bool],
    rows: &[usize],
    pos: usize,
    features: &[usize],
    min_leaf: usize,
    scratch: &mut Vec<(f64, bool)>,
) -> Option<Split> {
    let n = rows.len();
    let parent = gini_weighted(n, pos);
    let mut best: Option<(f64, Split)> = None;
    for &f in features {
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (x.get(i, f), y[i])));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0;
        for k in 1..n {
            left_pos += usize::from(scratch[k - 1].1);
            let (lo, hi) = (scratch[k - 1].0, scratch[k].0);
            if hi <= lo || k < min_leaf || n - k < min_leaf {
                continue;
            }
            let gain = parent - gini_weighted(k, left_pos) - gini_weighted(n - k, pos - left_pos);
            let best_gain = best.as_ref().map_or(0.0, |b| b.0);
            if improves(gain, best_gain, n as f64) {
                best = Some((
                    gain,
                    Split {
                        feature: f,
                        threshold: midpoint(lo, hi),
                    },
                ));
            }
        }
    }
    best.map(|b| b.1)
}
