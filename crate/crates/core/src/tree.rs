//! Binary decision tree shared by the boosted and bagged ensembles.
//!
//! Rows with `x[feature] <= threshold` go left. Leaves carry a value and a
//! dense ordinal (`0..leaf_count`, numbered left to right).

use crate::codec::{Decoder, Encoder};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        ordinal: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    leaf_count: usize,
}

/// Relative tolerance under which two split gains count as tied.
pub(crate) const GAIN_TIE_TOLERANCE: f64 = 1e-12;

/// True when `gain` beats `best` by more than the tie tolerance. Callers
/// visit candidates by ascending feature then ascending threshold, so ties
/// resolve to the lowest feature index and threshold.
#[inline]
pub(crate) fn improves(gain: f64, best: f64, scale: f64) -> bool {
    gain > best + GAIN_TIE_TOLERANCE * scale.max(1.0)
}

/// Midpoint between two consecutive distinct sorted values, kept strictly
/// below `hi` so that `hi` routes right.
#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) * 0.5;
    if mid >= hi || mid < lo {
        lo
    } else {
        mid
    }
}

impl DecisionTree {
    /// Builds a tree from nodes whose leaves may carry arbitrary ordinals;
    /// ordinals are renumbered left to right.
    pub fn from_nodes(mut nodes: Vec<Node>) -> Self {
        let mut next = 0;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            match &mut nodes[id] {
                Node::Split { left, right, .. } => {
                    let (l, r) = (*left, *right);
                    stack.push(r);
                    stack.push(l);
                }
                Node::Leaf { ordinal, .. } => {
                    *ordinal = next;
                    next += 1;
                }
            }
        }
        Self {
            nodes,
            leaf_count: next,
        }
    }

    pub fn single_leaf(value: f64) -> Self {
        Self::from_nodes(vec![Node::Leaf { value, ordinal: 0 }])
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Node id of the leaf `x` reaches.
    #[inline]
    pub fn route(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return id,
            }
        }
    }

    #[inline]
    pub fn leaf(&self, x: &[f64]) -> (f64, usize) {
        match self.nodes[self.route(x)] {
            Node::Leaf { value, ordinal } => (value, ordinal),
            Node::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn set_leaf_value(&mut self, id: usize, v: f64) {
        if let Node::Leaf { value, .. } = &mut self.nodes[id] {
            *value = v;
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.usize(self.nodes.len());
        for n in &self.nodes {
            match n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    e.f64(0.0).usize(*feature).f64(*threshold).usize(*left).usize(*right);
                }
                Node::Leaf { value, .. } => {
                    e.f64(1.0).f64(*value);
                }
            }
        }
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let n = d.usize()?;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            if d.bool()? {
                nodes.push(Node::Leaf {
                    value: d.f64()?,
                    ordinal: 0,
                });
            } else {
                let feature = d.usize()?;
                let threshold = d.f64()?;
                let (left, right) = (d.usize()?, d.usize()?);
                if left >= n || right >= n {
                    return Err(d.error("child index out of range"));
                }
                nodes.push(Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                });
            }
        }
        if nodes.is_empty() {
            return Err(d.error("tree without nodes"));
        }
        // reject cycles: every node must be reachable exactly once from the root
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(d.error("tree structure is not a tree"));
            }
            if let Node::Split { left, right, .. } = nodes[id] {
                stack.push(left);
                stack.push(right);
            }
        }
        Ok(Self::from_nodes(nodes))
    }
}
