use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForestParams, SplitCriterion};
use crate::error::{Error, Result};

/// Relative gain below which a node is not split.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` routes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        support: f64,
    },
}

/// A regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeArrays", try_from = "TreeArrays")]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                Node::Leaf { value, .. } => return value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Serialized node layout: parallel arrays, `feature = -1` marks a leaf.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeArrays {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    value: Vec<f64>,
    support: Vec<f64>,
}

impl From<Tree> for TreeArrays {
    fn from(tree: Tree) -> Self {
        let n = tree.nodes.len();
        let mut a = TreeArrays {
            feature: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            left: Vec::with_capacity(n),
            right: Vec::with_capacity(n),
            value: Vec::with_capacity(n),
            support: Vec::with_capacity(n),
        };
        for node in tree.nodes {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    a.feature.push(feature as i64);
                    a.threshold.push(threshold);
                    a.left.push(left as u32);
                    a.right.push(right as u32);
                    a.value.push(0.0);
                    a.support.push(0.0);
                }
                Node::Leaf { value, support } => {
                    a.feature.push(-1);
                    a.threshold.push(0.0);
                    a.left.push(0);
                    a.right.push(0);
                    a.value.push(value);
                    a.support.push(support);
                }
            }
        }
        a
    }
}

impl TryFrom<TreeArrays> for Tree {
    type Error = Error;

    fn try_from(a: TreeArrays) -> Result<Self> {
        let n = a.feature.len();
        if n == 0 {
            return Err(Error::Format("tree has no nodes".into()));
        }
        if [
            a.threshold.len(),
            a.left.len(),
            a.right.len(),
            a.value.len(),
            a.support.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::Format("tree node arrays differ in length".into()));
        }
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let node = if a.feature[i] < 0 {
                if a.support[i].is_nan() || a.support[i] <= 0.0 {
                    return Err(Error::Format(format!("leaf {i} has non-positive support")));
                }
                Node::Leaf {
                    value: a.value[i],
                    support: a.support[i],
                }
            } else {
                let (left, right) = (a.left[i] as usize, a.right[i] as usize);
                // children always follow their parent, which also rules out cycles
                if left <= i || right <= i || left >= n || right >= n {
                    return Err(Error::Format(format!("node {i} has invalid children")));
                }
                Node::Split {
                    feature: a.feature[i] as usize,
                    threshold: a.threshold[i],
                    left,
                    right,
                }
            };
            nodes.push(node);
        }
        Ok(Tree { nodes })
    }
}

/// Training sample inside a tree: row index into the active set and its
/// node weight.
#[derive(Debug, Clone, Copy)]
pub(super) struct Sample {
    pub row: usize,
    pub weight: f64,
}

pub(super) struct Grower<'a> {
    pub x: &'a [&'a [f64]],
    pub y: &'a [f64],
    pub params: &'a ForestParams,
    pub dim: usize,
    pub features_per_split: usize,
    pub rng: &'a mut ChaCha8Rng,
    pub nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    pub fn grow(mut self, mut samples: Vec<Sample>) -> Tree {
        self.grow_node(&mut samples, 0);
        Tree { nodes: self.nodes }
    }

    fn grow_node(&mut self, samples: &mut [Sample], depth: usize) -> usize {
        let id = self.nodes.len();
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        let leaf_value = self.leaf_value(samples, total);
        self.nodes.push(Node::Leaf {
            value: leaf_value,
            support: total,
        });

        let first = self.y[samples[0].row];
        let pure = samples.iter().all(|s| self.y[s.row] == first);
        if pure
            || depth >= self.params.max_depth
            || total < 2.0 * self.params.min_leaf_weight
            || samples.len() < 2
        {
            return id;
        }
        let Some(best) = self.best_split(samples, total) else {
            return id;
        };

        // stable partition keeps the sample order deterministic
        let (mut left, mut right): (Vec<Sample>, Vec<Sample>) = samples
            .iter()
            .partition(|s| self.x[s.row][best.feature] <= best.threshold);
        let l = self.grow_node(&mut left, depth + 1);
        let r = self.grow_node(&mut right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn leaf_value(&self, samples: &[Sample], total: f64) -> f64 {
        let first = self.y[samples[0].row];
        if samples.iter().all(|s| self.y[s.row] == first) {
            return first;
        }
        match self.params.criterion {
            SplitCriterion::SquaredError => {
                samples
                    .iter()
                    .map(|s| s.weight * self.y[s.row])
                    .sum::<f64>()
                    / total
            }
            SplitCriterion::AbsoluteError => {
                let mut ys: Vec<(f64, f64)> =
                    samples.iter().map(|s| (self.y[s.row], s.weight)).collect();
                weighted_median(&mut ys).0
            }
        }
    }

    fn best_split(&mut self, samples: &[Sample], total: f64) -> Option<Candidate> {
        let mut features =
            index::sample(self.rng, self.dim, self.features_per_split.min(self.dim)).into_vec();
        features.sort_unstable();

        let impurity = match self.params.criterion {
            SplitCriterion::SquaredError => {
                let mean = samples
                    .iter()
                    .map(|s| s.weight * self.y[s.row])
                    .sum::<f64>()
                    / total;
                samples
                    .iter()
                    .map(|s| s.weight * (self.y[s.row] - mean).powi(2))
                    .sum::<f64>()
            }
            SplitCriterion::AbsoluteError => {
                let mut ys: Vec<(f64, f64)> =
                    samples.iter().map(|s| (self.y[s.row], s.weight)).collect();
                weighted_median(&mut ys).1
            }
        };
        if impurity.is_nan() || impurity <= 0.0 {
            return None;
        }

        let mut best: Option<Candidate> = None;
        // (x, y, w) sorted by x
        let mut col: Vec<(f64, f64, f64)> = Vec::with_capacity(samples.len());
        for &f in &features {
            col.clear();
            col.extend(
                samples
                    .iter()
                    .map(|s| (self.x[s.row][f], self.y[s.row], s.weight)),
            );
            col.sort_by(|a, b| a.0.total_cmp(&b.0));
            let found = match self.params.criterion {
                SplitCriterion::SquaredError => {
                    scan_squared(&col, total, self.params.min_leaf_weight)
                }
                SplitCriterion::AbsoluteError => {
                    scan_absolute(&col, impurity, self.params.min_leaf_weight)
                }
            };
            if let Some((threshold, gain)) = found {
                // strict comparison: ties keep the lower feature index
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > MIN_RELATIVE_GAIN * impurity)
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) * 0.5;
    if t >= b {
        a
    } else {
        t
    }
}

/// Best (threshold, gain) for weighted squared error. Gain is the weighted
/// SSE reduction `wl * wr / w * (mean_l - mean_r)^2`.
fn scan_squared(col: &[(f64, f64, f64)], total: f64, min_leaf: f64) -> Option<(f64, f64)> {
    let sum: f64 = col.iter().map(|c| c.2 * c.1).sum();
    let (mut wl, mut sl) = (0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..col.len() - 1 {
        wl += col[i].2;
        sl += col[i].2 * col[i].1;
        if col[i].0 == col[i + 1].0 {
            continue;
        }
        let wr = total - wl;
        if wl < min_leaf || wr < min_leaf || wr <= 0.0 {
            continue;
        }
        let diff = sl / wl - (sum - sl) / wr;
        let gain = wl * wr / total * diff * diff;
        if best.is_none_or(|b| gain > b.1) {
            best = Some((midpoint(col[i].0, col[i + 1].0), gain));
        }
    }
    best
}

/// Best (threshold, gain) for weighted absolute error around weighted
/// medians. Quadratic in the node size.
fn scan_absolute(col: &[(f64, f64, f64)], parent: f64, min_leaf: f64) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    let mut wl = 0.0;
    let total: f64 = col.iter().map(|c| c.2).sum();
    let mut buf = Vec::with_capacity(col.len());
    for i in 0..col.len() - 1 {
        wl += col[i].2;
        if col[i].0 == col[i + 1].0 {
            continue;
        }
        let wr = total - wl;
        if wl < min_leaf || wr < min_leaf || wr <= 0.0 {
            continue;
        }
        buf.clear();
        buf.extend(col[..=i].iter().map(|c| (c.1, c.2)));
        let dl = weighted_median(&mut buf).1;
        buf.clear();
        buf.extend(col[i + 1..].iter().map(|c| (c.1, c.2)));
        let dr = weighted_median(&mut buf).1;
        let gain = parent - dl - dr;
        if best.is_none_or(|b| gain > b.1) {
            best = Some((midpoint(col[i].0, col[i + 1].0), gain));
        }
    }
    best
}

/// Lower weighted median of `(value, weight)` pairs and the weighted absolute
/// deviation around it. Sorts `items` by value.
pub(super) fn weighted_median(items: &mut [(f64, f64)]) -> (f64, f64) {
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut acc = 0.0;
    let mut med = items[items.len() - 1].0;
    for &(v, w) in items.iter() {
        acc += w;
        if acc >= 0.5 * total {
            med = v;
            break;
        }
    }
    let dev = items.iter().map(|&(v, w)| w * (v - med).abs()).sum();
    (med, dev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_median_respects_weights() {
        let mut v = vec![(1.0, 1.0), (10.0, 5.0), (3.0, 1.0)];
        assert_eq!(weighted_median(&mut v), (10.0, 9.0 + 7.0));
        let mut v = vec![(1.0, 1.0), (2.0, 1.0)];
        assert_eq!(weighted_median(&mut v).0, 1.0);
    }

    #[test]
    fn midpoint_never_reaches_upper() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        assert_eq!(midpoint(a, b), a);
        assert_eq!(midpoint(0.0, 1.0), 0.5);
    }

    #[test]
    fn squared_scan_prefers_clean_break() {
        // two rows at x=0 (y=0) and two at x=1 (y=10)
        let col = vec![
            (0.0, 0.0, 1.0),
            (0.0, 0.0, 1.0),
            (1.0, 10.0, 1.0),
            (1.0, 10.0, 1.0),
        ];
        let (t, gain) = scan_squared(&col, 4.0, 1.0).unwrap();
        assert_eq!(t, 0.5);
        // SSE drops from 100 to 0
        assert!((gain - 100.0).abs() < 1e-12);
    }

    #[test]
    fn arrays_reject_bad_children() {
        let a = TreeArrays {
            feature: vec![0, -1],
            threshold: vec![0.5, 0.0],
            left: vec![1, 0],
            right: vec![0, 0],
            value: vec![0.0, 1.0],
            support: vec![0.0, 1.0],
        };
        assert!(Tree::try_from(a).is_err());
    }
}
