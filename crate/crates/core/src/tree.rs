//! Single regression tree: quantile split proposals, second-order split gain,
//! optimal leaf weights and best-first growth.

use std::convert::TryFrom;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MISSING_BIN: u16 = u16::MAX;

/// Optimal leaf weight `-G / (H + λ)`.
pub fn leaf_weight(g_sum: f64, h_sum: f64, lambda_reg: f64) -> Result<f64> {
    let denom = h_sum + lambda_reg;
    if !(denom > 0.0) {
        return Err(Error::Numerical(format!(
            "degenerate leaf: hessian sum {h_sum} + lambda {lambda_reg} is not positive"
        )));
    }
    Ok(-g_sum / denom)
}

/// Loss reduction of splitting a node into left/right children, minus the per-leaf penalty `η`.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda_reg: f64, eta: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda_reg);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - eta
}

/// First and second derivatives of the loss at the current boosting estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPairs {
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl GradientPairs {
    pub fn new(g: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if g.len() != h.len() {
            return Err(Error::InvalidData(format!(
                "gradient length {} != hessian length {}",
                g.len(),
                h.len()
            )));
        }
        if let Some(i) = g.iter().chain(&h).position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient pair at position {i}")));
        }
        Ok(Self { g, h })
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowParams {
    pub max_leaves: usize,
    pub lambda_reg: f64,
    pub eta: f64,
    pub n_quantile_bins: usize,
    pub colsample: f64,
}

impl Default for GrowParams {
    fn default() -> Self {
        Self { max_leaves: 8, lambda_reg: 1.0, eta: 0.0, n_quantile_bins: 32, colsample: 1.0 }
    }
}

impl GrowParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_leaves < 2 {
            return Err(Error::InvalidParameter(format!("max_leaves must be >= 2, got {}", self.max_leaves)));
        }
        if !(self.lambda_reg >= 0.0 && self.eta >= 0.0) {
            return Err(Error::InvalidParameter("lambda_reg and eta must be nonnegative".into()));
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return Err(Error::InvalidParameter(format!("colsample must lie in (0, 1], got {}", self.colsample)));
        }
        if self.n_quantile_bins < 2 || self.n_quantile_bins >= MISSING_BIN as usize {
            return Err(Error::InvalidParameter(format!("n_quantile_bins out of range: {}", self.n_quantile_bins)));
        }
        Ok(())
    }
}

/// Candidate thresholds per feature, taken from empirical quantiles of the training values.
///
/// When a feature has at most `n_bins` distinct values every distinct value except the
/// largest is a candidate, so binning is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCuts {
    cuts: Vec<Vec<f64>>,
}

impl FeatureCuts {
    pub fn from_matrix(x: &Matrix, n_bins: usize) -> Self {
        let cuts = (0..x.n_cols())
            .map(|j| {
                let mut v: Vec<f64> = x.column(j).filter(|v| !v.is_nan()).collect();
                v.sort_by(f64::total_cmp);
                quantile_cuts(&v, n_bins)
            })
            .collect();
        Self { cuts }
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.cuts[j]
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }

    /// Bin of `value`: the number of cuts strictly below it, so `value ≤ cuts[b]`.
    fn bin(&self, j: usize, value: f64) -> u16 {
        if value.is_nan() {
            MISSING_BIN
        } else {
            self.cuts[j].partition_point(|c| *c < value) as u16
        }
    }
}

fn quantile_cuts(sorted: &[f64], n_bins: usize) -> Vec<f64> {
    let mut distinct = sorted.to_vec();
    distinct.dedup();
    if distinct.len() <= 1 {
        return Vec::new();
    }
    let max = *distinct.last().unwrap_or(&0.0);
    let mut cuts = if distinct.len() <= n_bins {
        distinct
    } else {
        let n = sorted.len();
        (1..n_bins)
            .map(|q| {
                // type-1 empirical quantile at level q / n_bins
                let idx = (q * n).div_ceil(n_bins).max(1) - 1;
                sorted[idx]
            })
            .collect()
    };
    cuts.dedup();
    cuts.retain(|c| *c < max);
    cuts
}

/// Training matrix mapped to quantile bins, stored column-major.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    n_rows: usize,
    bins: Vec<u16>,
    cuts: FeatureCuts,
}

impl BinnedMatrix {
    pub fn new(x: &Matrix, n_bins: usize) -> Self {
        let cuts = FeatureCuts::from_matrix(x, n_bins);
        let n_rows = x.n_rows();
        let mut bins = vec![0u16; n_rows * x.n_cols()];
        for j in 0..x.n_cols() {
            for r in 0..n_rows {
                bins[j * n_rows + r] = cuts.bin(j, x.get(r, j));
            }
        }
        Self { n_rows, bins, cuts }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.cuts.n_features()
    }

    pub fn cuts(&self) -> &FeatureCuts {
        &self.cuts
    }

    #[inline]
    fn bin(&self, row: usize, feature: usize) -> u16 {
        self.bins[feature * self.n_rows + row]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Routes `x[feature] ≤ threshold` left; missing values follow `default_left`.
    Branch {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
        /// Split gain recorded at training time.
        gain: f64,
        /// Hessian mass reaching the node at training time.
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeDoc", into = "TreeDoc")]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    /// Validate a node list whose root is node 0.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Schema("tree has no nodes".into()));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            match node {
                TreeNode::Branch { left, right, threshold, .. } => {
                    if !threshold.is_finite() {
                        return Err(Error::Schema(format!("node {id}: non-finite threshold")));
                    }
                    for &child in [left, right] {
                        if child <= id || child >= nodes.len() {
                            return Err(Error::Schema(format!("node {id}: invalid child {child}")));
                        }
                        parents[child] += 1;
                    }
                    if left == right {
                        return Err(Error::Schema(format!("node {id}: identical children")));
                    }
                }
                TreeNode::Leaf { weight, .. } => {
                    if !weight.is_finite() {
                        return Err(Error::Schema(format!("node {id}: non-finite leaf weight")));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|p| *p != 1) {
            return Err(Error::Schema("nodes do not form a binary tree rooted at 0".into()));
        }
        Ok(Self { nodes })
    }

    pub fn single_leaf(weight: f64) -> Self {
        Self { nodes: vec![TreeNode::Leaf { weight, cover: 0.0 }] }
    }

    pub fn stump(feature: usize, threshold: f64, left_weight: f64, right_weight: f64) -> Self {
        Self {
            nodes: vec![
                TreeNode::Branch { feature, threshold, default_left: true, left: 1, right: 2, gain: 0.0, cover: 0.0 },
                TreeNode::Leaf { weight: left_weight, cover: 0.0 },
                TreeNode::Leaf { weight: right_weight, cover: 0.0 },
            ],
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    /// Largest feature index referenced by a split.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Branch { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .max()
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { .. } => return id,
                TreeNode::Branch { feature, threshold, default_left, left, right, .. } => {
                    let v = x[*feature];
                    let go_left = if v.is_nan() { *default_left } else { v <= *threshold };
                    id = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { weight, .. } => *weight,
            TreeNode::Branch { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    /// Multiply every leaf weight by `factor` (shrinkage).
    pub fn scale(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let TreeNode::Leaf { weight, .. } = node {
                *weight *= factor;
            }
        }
    }
}

/// Spec-shaped shorthand for [`Tree::predict`].
pub fn predict_tree(tree: &Tree, x: &[f64]) -> f64 {
    tree.predict(x)
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default_left: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gain: Option<f64>,
    #[serde(default)]
    cover: f64,
}

impl From<Tree> for TreeDoc {
    fn from(tree: Tree) -> Self {
        let nodes = tree
            .nodes
            .into_iter()
            .enumerate()
            .map(|(id, node)| match node {
                TreeNode::Branch { feature, threshold, default_left, left, right, gain, cover } => NodeDoc {
                    id,
                    feature: Some(feature),
                    threshold: Some(threshold),
                    default_left: Some(default_left),
                    left: Some(left),
                    right: Some(right),
                    weight: None,
                    gain: Some(gain),
                    cover,
                },
                TreeNode::Leaf { weight, cover } => NodeDoc {
                    id,
                    feature: None,
                    threshold: None,
                    default_left: None,
                    left: None,
                    right: None,
                    weight: Some(weight),
                    gain: None,
                    cover,
                },
            })
            .collect();
        TreeDoc { nodes }
    }
}

impl TryFrom<TreeDoc> for Tree {
    type Error = Error;

    fn try_from(doc: TreeDoc) -> Result<Self> {
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (pos, n) in doc.nodes.into_iter().enumerate() {
            if n.id != pos {
                return Err(Error::Schema(format!("node ids must be 0..n in order; found {} at {pos}", n.id)));
            }
            let node = match (n.feature, n.threshold, n.left, n.right, n.weight) {
                (Some(feature), Some(threshold), Some(left), Some(right), None) => TreeNode::Branch {
                    feature,
                    threshold,
                    default_left: n.default_left.unwrap_or(true),
                    left,
                    right,
                    gain: n.gain.unwrap_or(0.0),
                    cover: n.cover,
                },
                (None, None, None, None, Some(weight)) => TreeNode::Leaf { weight, cover: n.cover },
                _ => return Err(Error::Schema(format!("node {pos} is neither a complete branch nor a leaf"))),
            };
            nodes.push(node);
        }
        Tree::from_nodes(nodes)
    }
}

/// Feature subset for one boosting round: `max(1, round(s·p))` indices drawn without
/// replacement, sorted ascending. A pure function of `(seed, round)`.
pub fn sample_features(n_features: usize, colsample: f64, seed: u64, round: u64) -> Vec<usize> {
    if colsample >= 1.0 || n_features <= 1 {
        return (0..n_features).collect();
    }
    let k = ((colsample * n_features as f64).round() as usize).clamp(1, n_features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round);
    let mut idx = sample(&mut rng, n_features, k).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, Default)]
struct BinStat {
    g: f64,
    h: f64,
    n: usize,
}

impl BinStat {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn plus(self, o: BinStat) -> BinStat {
        BinStat { g: self.g + o.g, h: self.h + o.h, n: self.n + o.n }
    }

    fn minus(self, o: BinStat) -> BinStat {
        BinStat { g: self.g - o.g, h: self.h - o.h, n: self.n - o.n }
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    cut: usize,
    threshold: f64,
    default_left: bool,
    gain: f64,
}

struct OpenLeaf {
    node: usize,
    rows: Vec<usize>,
    g: f64,
    h: f64,
    best: Option<SplitChoice>,
}

/// Grow one tree on raw features: bins the matrix and samples the feature subset
/// from `seed` before delegating to [`grow_binned`].
pub fn grow(x: &Matrix, gp: &GradientPairs, params: &GrowParams, seed: u64) -> Result<Tree> {
    params.validate()?;
    let binned = BinnedMatrix::new(x, params.n_quantile_bins);
    let features = sample_features(x.n_cols(), params.colsample, seed, 0);
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    grow_binned(&binned, gp, &rows, &features, params)
}

/// Best-first growth restricted to `rows` and `features`.
///
/// The open leaf whose best candidate split has the highest positive gain is split
/// next; growth stops at `max_leaves` leaves or when no candidate has positive gain.
/// Ties prefer the lowest feature index, then the lowest threshold, then the lowest
/// node id.
pub fn grow_binned(
    binned: &BinnedMatrix,
    gp: &GradientPairs,
    rows: &[usize],
    features: &[usize],
    params: &GrowParams,
) -> Result<Tree> {
    if rows.is_empty() {
        return Err(Error::InvalidData("cannot grow a tree on an empty dataset".into()));
    }
    if gp.len() != binned.n_rows() {
        return Err(Error::InvalidData(format!(
            "{} gradient pairs for {} rows",
            gp.len(),
            binned.n_rows()
        )));
    }
    let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + gp.g[r], h + gp.h[r]));
    let mut nodes = vec![TreeNode::Leaf { weight: 0.0, cover: h }];
    let mut root = OpenLeaf { node: 0, rows: rows.to_vec(), g, h, best: None };
    root.best = best_split(binned, gp, &root, features, params);
    let mut open = vec![root];

    while open.len() < params.max_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            let Some(best) = leaf.best else { continue };
            if best.gain <= 0.0 {
                continue;
            }
            let better = match pick {
                None => true,
                Some(p) => {
                    let cur = open[p].best.map_or(f64::NEG_INFINITY, |b| b.gain);
                    best.gain > cur || (best.gain == cur && leaf.node < open[p].node)
                }
            };
            if better {
                pick = Some(i);
            }
        }
        let Some(i) = pick else { break };
        let leaf = open.swap_remove(i);
        let split = leaf.best.expect("picked leaf has a split");
        let (mut lrows, mut rrows) = (Vec::new(), Vec::new());
        for &r in &leaf.rows {
            let b = binned.bin(r, split.feature);
            let left = if b == MISSING_BIN { split.default_left } else { (b as usize) <= split.cut };
            if left {
                lrows.push(r);
            } else {
                rrows.push(r);
            }
        }
        let left_id = nodes.len();
        let right_id = left_id + 1;
        nodes[leaf.node] = TreeNode::Branch {
            feature: split.feature,
            threshold: split.threshold,
            default_left: split.default_left,
            left: left_id,
            right: right_id,
            gain: split.gain,
            cover: leaf.h,
        };
        let leaves_after = open.len() + 2;
        for (id, child_rows) in [(left_id, lrows), (right_id, rrows)] {
            let (g, h) = child_rows.iter().fold((0.0, 0.0), |(g, h), &r| (g + gp.g[r], h + gp.h[r]));
            nodes.push(TreeNode::Leaf { weight: 0.0, cover: h });
            let mut child = OpenLeaf { node: id, rows: child_rows, g, h, best: None };
            if leaves_after < params.max_leaves {
                child.best = best_split(binned, gp, &child, features, params);
            }
            open.push(child);
        }
    }

    for leaf in &open {
        nodes[leaf.node] = TreeNode::Leaf { weight: leaf_weight(leaf.g, leaf.h, params.lambda_reg)?, cover: leaf.h };
    }
    Tree::from_nodes(nodes)
}

fn best_split(
    binned: &BinnedMatrix,
    gp: &GradientPairs,
    leaf: &OpenLeaf,
    features: &[usize],
    params: &GrowParams,
) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        let cuts = binned.cuts.feature(f);
        if cuts.is_empty() {
            continue;
        }
        let mut hist = vec![BinStat::default(); cuts.len() + 1];
        let mut missing = BinStat::default();
        for &r in &leaf.rows {
            let b = binned.bin(r, f);
            if b == MISSING_BIN {
                missing.add(gp.g[r], gp.h[r]);
            } else {
                hist[b as usize].add(gp.g[r], gp.h[r]);
            }
        }
        let present = hist.iter().fold(BinStat::default(), |acc, s| acc.plus(*s));
        let mut left = BinStat::default();
        for (cut, &threshold) in cuts.iter().enumerate() {
            left = left.plus(hist[cut]);
            let right = present.minus(left);
            let mut options: Vec<(BinStat, BinStat, bool)> = Vec::with_capacity(2);
            if missing.n > 0 {
                options.push((left.plus(missing), right, true));
                options.push((left, right.plus(missing), false));
            } else {
                options.push((left, right, left.h >= right.h));
            }
            for (l, r, default_left) in options {
                if l.n == 0 || r.n == 0 {
                    continue;
                }
                let gain = split_gain(l.g, l.h, r.g, r.h, params.lambda_reg, params.eta);
                if !gain.is_finite() {
                    continue;
                }
                if best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice { feature: f, cut, threshold, default_left, gain });
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn leaf_weight_examples() {
        assert_eq!(leaf_weight(0.0, 5.0, 1.0).unwrap(), 0.0);
        assert_eq!(leaf_weight(2.0, 1.0, 1.0).unwrap(), -1.0);
        assert_eq!(leaf_weight(-3.0, 2.0, 0.0).unwrap(), 1.5);
        assert!(leaf_weight(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn split_gain_examples() {
        assert_relative_eq!(split_gain(-2.0, 1.0, 2.0, 1.0, 0.0, 0.0), 4.0);
        assert_relative_eq!(split_gain(0.0, 1.0, 0.0, 3.0, 1.0, 0.7), -0.7);
        // proportional children: gL/hL = gR/hR
        assert_relative_eq!(split_gain(1.5, 3.0, 2.5, 5.0, 0.0, 0.2), -0.2, epsilon = 1e-12);
    }

    fn column(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradients_give_single_leaf() {
        let x = column(&[1.0, 2.0, 3.0, 4.0]);
        let gp = GradientPairs::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        let t = grow(&x, &gp, &GrowParams::default(), 0).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert_eq!(t.predict(&[2.5]), 0.0);
    }

    #[test]
    fn predict_routing() {
        assert_eq!(Tree::single_leaf(0.7).predict(&[123.0, -4.0]), 0.7);
        let stump = Tree::stump(1, 0.0, -1.0, 1.0);
        assert_eq!(stump.predict(&[9.0, -5.0]), -1.0);
        assert_eq!(stump.predict(&[9.0, 5.0]), 1.0);
        assert_eq!(stump.predict(&[9.0, 0.0]), -1.0);
        assert_eq!(predict_tree(&stump, &[0.0, f64::NAN]), -1.0);
    }

    #[test]
    fn quantile_cuts_exact_for_few_values() {
        assert_eq!(quantile_cuts(&[1.0, 1.0, 2.0, 5.0], 32), vec![1.0, 2.0]);
        assert!(quantile_cuts(&[3.0, 3.0], 32).is_empty());
        let many: Vec<f64> = (0..1000).map(f64::from).collect();
        let c = quantile_cuts(&many, 4);
        assert_eq!(c, vec![249.0, 499.0, 749.0]);
    }

    #[test]
    fn missing_values_follow_learned_direction() {
        // missing rows carry the same gradient as the high rows
        let x = column(&[0.0, 1.0, 2.0, 10.0, 11.0, f64::NAN, f64::NAN]);
        let g = vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let gp = GradientPairs::new(g, vec![1.0; 7]).unwrap();
        let params = GrowParams { max_leaves: 2, lambda_reg: 0.0, ..GrowParams::default() };
        let t = grow(&x, &gp, &params, 0).unwrap();
        match &t.nodes()[0] {
            TreeNode::Branch { threshold, default_left, .. } => {
                assert_eq!(*threshold, 2.0);
                assert!(!default_left);
            }
            _ => panic!("expected a split"),
        }
        assert_eq!(t.predict(&[f64::NAN]), t.predict(&[11.0]));
    }

    #[test]
    fn leaf_cap_is_respected() {
        let x = column(&(0..64).map(f64::from).collect::<Vec<_>>());
        let g: Vec<f64> = (0..64).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let gp = GradientPairs::new(g, vec![1.0; 64]).unwrap();
        for l in 2..7 {
            let params = GrowParams { max_leaves: l, lambda_reg: 0.0, ..GrowParams::default() };
            assert!(grow(&x, &gp, &params, 0).unwrap().n_leaves() <= l);
        }
    }

    #[test]
    fn tree_document_rejects_bad_structure() {
        let bad = r#"{"nodes":[{"id":0,"feature":0,"threshold":1.0,"left":1,"right":1},{"id":1,"weight":1.0}]}"#;
        assert!(serde_json::from_str::<Tree>(bad).is_err());
        let orphan = r#"{"nodes":[{"id":0,"weight":1.0},{"id":1,"weight":1.0}]}"#;
        assert!(serde_json::from_str::<Tree>(orphan).is_err());
        let good = r#"{"nodes":[{"id":0,"feature":0,"threshold":1.0,"left":1,"right":2},{"id":1,"weight":-1.0},{"id":2,"weight":1.0}]}"#;
        let t: Tree = serde_json::from_str(good).unwrap();
        assert_eq!(t.predict(&[1.0]), -1.0);
        assert_eq!(t.predict(&[1.5]), 1.0);
    }

    #[test]
    fn feature_sampling_is_deterministic() {
        let a = sample_features(10, 0.5, 42, 3);
        assert_eq!(a, sample_features(10, 0.5, 42, 3));
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_features(10, 0.01, 1, 0).len(), 1);
        assert_eq!(sample_features(4, 1.0, 1, 0), vec![0, 1, 2, 3]);
    }
}
