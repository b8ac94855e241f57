//! Gradient-boosted trees on logistic loss, used as a learned feature
//! expander: every tree contributes a one-hot block marking the leaf a
//! transaction falls into.
//!
//! Each round fits a least-squares regression tree to the residuals
//! `y - p` (exact greedy search over midpoints of sorted distinct values),
//! then sets leaf values by a Newton step `sum(r) / (sum(h) + 1)` with
//! `h = p (1 - p)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::math::{log_loss, sigmoid, DenseMatrix};
use crate::tree::{improves, midpoint, DecisionTree, Node};
use crate::{Error, Result};

/// Ridge added to the hessian sum in the Newton leaf value.
pub const NEWTON_RIDGE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "gbdt learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config(
                "gbdt max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    trees: Vec<DecisionTree>,
    learning_rate: f64,
    base_score: f64,
    n_features: usize,
    leaf_offsets: Vec<usize>,
    n_g: usize,
}

#[derive(Debug, Clone)]
pub struct GbdtFit {
    pub model: GbdtModel,
    /// Mean training log-loss before the first tree and after every round.
    pub loss_history: Vec<f64>,
}

impl GbdtModel {
    pub fn new(trees: Vec<DecisionTree>, learning_rate: f64, base_score: f64, n_features: usize) -> Result<Self> {
        if let Some(f) = trees.iter().filter_map(DecisionTree::max_feature).max() {
            if f >= n_features {
                return Err(Error::dimension("gbdt split feature", n_features, f + 1));
            }
        }
        let mut leaf_offsets = Vec::with_capacity(trees.len());
        let mut n_g = 0;
        for t in &trees {
            leaf_offsets.push(n_g);
            n_g += t.leaf_count();
        }
        Ok(Self {
            trees,
            learning_rate,
            base_score,
            n_features,
            leaf_offsets,
            n_g,
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Total leaf count over all trees: the width of the leaf encoding.
    pub fn n_g(&self) -> usize {
        self.n_g
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::dimension("gbdt input", self.n_features, x.len()));
        }
        Ok(())
    }

    pub fn raw_score(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let total: f64 = self.trees.iter().map(|t| t.leaf(x).0).sum();
        Ok(self.base_score + self.learning_rate * total)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.raw_score(x)?))
    }

    /// Position of the reached leaf within the `n_g`-wide encoding, per tree.
    pub fn leaf_positions(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.check(x)?;
        Ok(self
            .trees
            .iter()
            .zip(&self.leaf_offsets)
            .map(|(t, off)| off + t.leaf(x).1)
            .collect())
    }

    /// One-hot block per tree, concatenated in tree order.
    pub fn transform_leaves(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_g];
        for p in self.leaf_positions(x)? {
            out[p] = 1.0;
        }
        Ok(out)
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.usize(self.n_features)
            .f64(self.learning_rate)
            .f64(self.base_score)
            .usize(self.trees.len());
        for t in &self.trees {
            t.encode(e);
        }
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let n_features = d.usize()?;
        let learning_rate = d.f64()?;
        let base_score = d.f64()?;
        let n = d.usize()?;
        let trees = (0..n).map(|_| DecisionTree::decode(d)).collect::<Result<Vec<_>>>()?;
        Self::new(trees, learning_rate, base_score, n_features)
    }
}

/// `V_sg = [x_A || leaves]`.
pub fn concat_vsg(x_a: &[f64], leaves: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x_a.len() + leaves.len());
    v.extend_from_slice(x_a);
    v.extend_from_slice(leaves);
    v
}

fn mean_log_loss(raw: &[f64], y: &[bool]) -> f64 {
    raw.iter().zip(y).map(|(&f, &l)| log_loss(sigmoid(f), l)).sum::<f64>() / raw.len() as f64
}

pub fn train_gbdt(x: &DenseMatrix, y: &[bool], params: &GbdtParams) -> Result<GbdtFit> {
    params.validate()?;
    let n = x.rows();
    if y.len() != n {
        return Err(Error::dimension("gbdt labels", n, y.len()));
    }
    if n < 2 {
        return Err(Error::Training("gbdt needs at least two rows".into()));
    }
    if !x.is_finite() {
        return Err(Error::Data("gbdt input contains non-finite values".into()));
    }
    let positives = y.iter().filter(|&&l| l).count();
    if positives == 0 || positives == n {
        return Err(Error::Training("gbdt needs both classes present".into()));
    }

    let prior = positives as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let presorted = presort(x);
    let mut raw = vec![base_score; n];
    let mut loss_history = vec![mean_log_loss(&raw, y)];
    let mut trees = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        let mut residual = vec![0.0; n];
        let mut hessian = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(raw[i]);
            residual[i] = f64::from(u8::from(y[i])) - p;
            hessian[i] = p * (1.0 - p);
        }
        let mut tree = grow_tree(x, &presorted, &residual, params.max_depth, params.min_samples_leaf);

        let mut sums: Vec<(f64, f64)> = vec![(0.0, 0.0); tree.nodes().len()];
        let leaf_of: Vec<usize> = (0..n).map(|i| tree.route(x.row(i))).collect();
        for i in 0..n {
            sums[leaf_of[i]].0 += residual[i];
            sums[leaf_of[i]].1 += hessian[i];
        }
        for (id, &(g, h)) in sums.iter().enumerate() {
            if matches!(tree.nodes()[id], Node::Leaf { .. }) {
                tree.set_leaf_value(id, g / (h + NEWTON_RIDGE));
            }
        }
        for i in 0..n {
            if let Node::Leaf { value, .. } = tree.nodes()[leaf_of[i]] {
                raw[i] += params.learning_rate * value;
            }
        }
        let loss = mean_log_loss(&raw, y);
        if !loss.is_finite() {
            return Err(Error::Training("gbdt training loss became non-finite".into()));
        }
        loss_history.push(loss);
        trees.push(tree);
    }

    let model = GbdtModel::new(trees, params.learning_rate, base_score, x.cols())?;
    Ok(GbdtFit { model, loss_history })
}

/// Per-feature row order, ascending by value (ties by row index).
fn presort(x: &DenseMatrix) -> Vec<Vec<u32>> {
    (0..x.cols())
        .into_par_iter()
        .map(|f| {
            let mut idx: Vec<u32> = (0..x.rows() as u32).collect();
            idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
            idx
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    count: usize,
    sum: f64,
    sum_sq: f64,
}

const NO_NODE: u32 = u32::MAX;

/// Level-wise exact greedy least-squares tree on `residual`. Leaf values
/// are left at zero for the caller to fill.
fn grow_tree(
    x: &DenseMatrix,
    presorted: &[Vec<u32>],
    residual: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> DecisionTree {
    let n = x.rows();
    let mut nodes = vec![Node::Leaf { value: 0.0, ordinal: 0 }];
    // active[k] = tree node id of the k-th node still open for splitting
    let mut active: Vec<usize> = vec![0];
    let mut stats = vec![NodeStats {
        count: n,
        sum: residual.iter().sum(),
        sum_sq: residual.iter().map(|r| r * r).sum(),
    }];
    let mut slot: Vec<u32> = vec![0; n];

    for _depth in 0..max_depth {
        if active.is_empty() {
            break;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = presorted
            .par_iter()
            .enumerate()
            .map(|(f, order)| scan_feature(x, f, order, &slot, residual, &stats, min_leaf))
            .collect();

        let mut next_active = Vec::new();
        let mut next_stats = Vec::new();
        let mut remap: Vec<Option<(usize, f64, u32)>> = vec![None; active.len()];
        for (k, &node_id) in active.iter().enumerate() {
            let mut best: Option<(usize, Candidate)> = None;
            for (f, cands) in per_feature.iter().enumerate() {
                if let Some(c) = cands[k] {
                    let best_gain = best.map_or(0.0, |(_, b)| b.gain);
                    if improves(c.gain, best_gain, stats[k].sum_sq) {
                        best = Some((f, c));
                    }
                }
            }
            if let Some((feature, c)) = best {
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0, ordinal: 0 });
                nodes.push(Node::Leaf { value: 0.0, ordinal: 0 });
                nodes[node_id] = Node::Split {
                    feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                remap[k] = Some((feature, c.threshold, next_active.len() as u32));
                next_active.push(left);
                next_active.push(left + 1);
                next_stats.push(NodeStats::default());
                next_stats.push(NodeStats::default());
            }
        }
        for i in 0..n {
            if slot[i] == NO_NODE {
                continue;
            }
            match remap[slot[i] as usize] {
                Some((feature, threshold, base)) => {
                    let s = base + u32::from(x.get(i, feature) > threshold);
                    slot[i] = s;
                    let st = &mut next_stats[s as usize];
                    st.count += 1;
                    st.sum += residual[i];
                    st.sum_sq += residual[i] * residual[i];
                }
                None => slot[i] = NO_NODE,
            }
        }
        active = next_active;
        stats = next_stats;
    }
    DecisionTree::from_nodes(nodes)
}

/// Best least-squares split of every open node on feature `f`. The gain
/// `S_L^2/n_L + S_R^2/n_R - S^2/n` is the reduction in squared error.
fn scan_feature(
    x: &DenseMatrix,
    f: usize,
    order: &[u32],
    slot: &[u32],
    residual: &[f64],
    stats: &[NodeStats],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let k = stats.len();
    let mut count = vec![0usize; k];
    let mut sum = vec![0.0f64; k];
    let mut last = vec![f64::NAN; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    for &i in order {
        let i = i as usize;
        let s = slot[i];
        if s == NO_NODE {
            continue;
        }
        let s = s as usize;
        let v = x.get(i, f);
        let nl = count[s];
        if nl >= min_leaf && v > last[s] && stats[s].count - nl >= min_leaf {
            let st = &stats[s];
            let nr = st.count - nl;
            let sl = sum[s];
            let sr = st.sum - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - st.sum * st.sum / st.count as f64;
            let best_gain = best[s].map_or(0.0, |b| b.gain);
            if improves(gain, best_gain, st.sum_sq) {
                best[s] = Some(Candidate {
                    gain,
                    threshold: midpoint(last[s], v),
                });
            }
        }
        count[s] += 1;
        sum[s] += residual[i];
        last[s] = v;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn matrix(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows, rows[0].len()).unwrap()
    }

    #[test]
    fn separable_four_points_follow_scalar_reference() {
        let x = matrix(&[vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]]);
        let y = [false, false, true, true];
        let params = GbdtParams {
            n_trees: 10,
            max_depth: 1,
            learning_rate: 1.0,
            min_samples_leaf: 1,
        };
        let fit = train_gbdt(&x, &y, &params).unwrap();

        // symmetric problem: positives sit at +a, negatives at -a
        let mut a = 0.0f64;
        let mut reference = vec![(1.0 + (-a).exp()).ln()];
        for _ in 0..10 {
            let p = sigmoid(a);
            a += 2.0 * (1.0 - p) / (2.0 * p * (1.0 - p) + NEWTON_RIDGE);
            reference.push((1.0 + (-a).exp()).ln());
        }
        for (got, want) in fit.loss_history.iter().zip(&reference) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        let p = fit.model.predict_proba(&[1.0]).unwrap();
        assert!(p > 0.9, "{p}");
        for t in fit.model.trees() {
            assert_eq!(t.root_split(), Some((0, 0.0)));
        }
    }

    #[test]
    fn zero_trees_predict_the_prior() {
        let x = matrix(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let y = [false, true, false, false];
        let params = GbdtParams {
            n_trees: 0,
            ..GbdtParams::default()
        };
        let fit = train_gbdt(&x, &y, &params).unwrap();
        assert_eq!(fit.model.n_g(), 0);
        assert!((fit.model.predict_proba(&[2.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(fit.model.transform_leaves(&[2.0]).unwrap().is_empty());
    }

    #[test]
    fn constant_features_yield_single_leaf_trees() {
        let x = matrix(&vec![vec![3.0, -1.0]; 6]);
        let y = [true, false, false, true, false, false];
        let fit = train_gbdt(&x, &y, &GbdtParams::default()).unwrap();
        assert!(fit.model.trees().iter().all(|t| t.leaf_count() == 1));
        assert!((fit.model.predict_proba(&[3.0, -1.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn prediction_examples() {
        let leaf = |v| DecisionTree::single_leaf(v);
        let m = GbdtModel::new(vec![leaf(0.0), leaf(0.0)], 0.1, 0.0, 1).unwrap();
        assert_eq!(m.predict_proba(&[5.0]).unwrap(), 0.5);
        let m = GbdtModel::new(vec![leaf(0.7)], 1.0, 0.0, 1).unwrap();
        assert_eq!(m.predict_proba(&[5.0]).unwrap(), sigmoid(0.7));

        let stump = DecisionTree::from_nodes(vec![
            Node::Split {
                feature: 0,
                threshold: 1.0,
                left: 1,
                right: 2,
            },
            Node::Leaf {
                value: -2.0,
                ordinal: 0,
            },
            Node::Leaf { value: 3.0, ordinal: 0 },
        ]);
        let m = GbdtModel::new(vec![stump], 0.5, 0.1, 1).unwrap();
        let below = m.predict_proba(&[0.9]).unwrap();
        let above = m.predict_proba(&[1.1]).unwrap();
        assert_eq!(below, sigmoid(0.1 - 1.0));
        assert_eq!(above, sigmoid(0.1 + 1.5));
        assert!(above > below);
        assert!(matches!(m.predict_proba(&[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn leaf_encoding_is_one_hot_per_tree() {
        let three_leaves = |t: f64| {
            DecisionTree::from_nodes(vec![
                Node::Split {
                    feature: 0,
                    threshold: t,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: 0.0, ordinal: 0 },
                Node::Split {
                    feature: 0,
                    threshold: t + 1.0,
                    left: 3,
                    right: 4,
                },
                Node::Leaf { value: 0.0, ordinal: 0 },
                Node::Leaf { value: 0.0, ordinal: 0 },
            ])
        };
        let m = GbdtModel::new(vec![three_leaves(0.0), three_leaves(-10.0)], 0.1, 0.0, 1).unwrap();
        assert_eq!(m.n_g(), 6);
        assert_eq!(m.transform_leaves(&[-1.0]).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            concat_vsg(&[1.0, 2.0, 3.0], &m.transform_leaves(&[-1.0]).unwrap()).len(),
            9
        );
        assert_eq!(concat_vsg(&[1.0, 2.0], &[]), vec![1.0, 2.0]);
    }

    #[test]
    fn single_class_and_non_finite_are_rejected() {
        let x = matrix(&[vec![1.0], vec![2.0]]);
        assert!(matches!(
            train_gbdt(&x, &[true, true], &GbdtParams::default()),
            Err(Error::Training(_))
        ));
        let x = matrix(&[vec![f64::NAN], vec![2.0]]);
        assert!(matches!(
            train_gbdt(&x, &[true, false], &GbdtParams::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn codec_round_trip_gives_identical_predictions() {
        let mut rng = seed::rng(3);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<bool> = rows.iter().map(|r| r[0] + 0.3 * r[1] > 0.6).collect();
        let fit = train_gbdt(&matrix(&rows), &y, &GbdtParams::default()).unwrap();
        let mut e = Encoder::new();
        fit.model.encode(&mut e);
        let bytes = e.into_bytes();
        let mut d = Decoder::new("gbdt", &bytes);
        let back = GbdtModel::decode(&mut d).unwrap();
        d.finish().unwrap();
        for r in &rows {
            assert_eq!(
                back.predict_proba(r).unwrap().to_bits(),
                fit.model.predict_proba(r).unwrap().to_bits()
            );
            assert_eq!(back.leaf_positions(r).unwrap(), fit.model.leaf_positions(r).unwrap());
        }
    }
}
