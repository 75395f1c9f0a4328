//! Gini random forest over dense `f32` rows with mean-decrease-impurity importances.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Candidate thresholds kept per feature; columns with fewer distinct values split exactly.
const MAX_CUTS: usize = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: 12, max_features: None, bootstrap: true, min_samples_split: 2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        n_samples: usize,
        /// Fraction of positive samples reaching the leaf.
        value: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f32,
        left: usize,
        right: usize,
        n_samples: usize,
        impurity: f64,
        impurity_decrease: f64,
    },
}

impl Node {
    pub fn n_samples(&self) -> usize {
        match *self {
            Node::Leaf { n_samples, .. } | Node::Split { n_samples, .. } => n_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    /// `nodes[0]` is the root.
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Builds a tree from explicit nodes, checking child links and decreases.
    pub fn from_nodes(n_features: usize, nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return shape_err("tree without nodes");
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { feature, left, right, impurity_decrease, .. } = *n {
                if feature >= n_features {
                    return shape_err(format!("node {i} splits on feature {feature} of {n_features}"));
                }
                if left >= nodes.len() || right >= nodes.len() || left <= i || right <= i || left == right {
                    return shape_err(format!("node {i} has invalid children"));
                }
                if !(impurity_decrease >= 0.0) {
                    return shape_err(format!("node {i} has negative impurity decrease"));
                }
            }
        }
        Ok(DecisionTree { n_features, nodes })
    }

    /// Unnormalized per-feature sum of `n_node / n_root * impurity_decrease`.
    pub fn raw_importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        let root = self.nodes[0].n_samples().max(1) as f64;
        for n in &self.nodes {
            if let Node::Split { feature, n_samples, impurity_decrease, .. } = *n {
                imp[feature] += n_samples as f64 / root * impurity_decrease;
            }
        }
        imp
    }

    pub fn predict_proba(&self, row: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl RandomForest {
    pub fn from_trees(trees: Vec<DecisionTree>, max_depth: usize, seed: u64) -> Result<Self> {
        if trees.is_empty() {
            return shape_err("forest without trees");
        }
        let d = trees[0].n_features;
        if trees.iter().any(|t| t.n_features != d) {
            return shape_err("trees disagree on feature count");
        }
        Ok(RandomForest { n_trees: trees.len(), trees, max_depth, seed })
    }

    pub fn n_features(&self) -> usize {
        self.trees[0].n_features
    }

    pub fn predict_proba(&self, row: &[f32]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Per-feature MDI averaged over trees and normalized to sum 1 when any is positive.
pub fn mdi_importances(rf: &RandomForest) -> Vec<f64> {
    let d = rf.n_features();
    let mut imp = vec![0.0; d];
    for t in &rf.trees {
        for (a, b) in imp.iter_mut().zip(t.raw_importances()) {
            *a += b;
        }
    }
    for v in &mut imp {
        *v /= rf.trees.len() as f64;
    }
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        for v in &mut imp {
            *v /= total;
        }
    }
    imp
}

#[inline]
fn gini(pos: f64, n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

/// Feature columns quantized against sorted cut values.
struct BinnedRows {
    n: usize,
    d: usize,
    /// Column-major bin codes: `codes[f * n + i]`.
    codes: Vec<u8>,
    cuts: Vec<Vec<f32>>,
}

impl BinnedRows {
    fn new(x: &[f32], n: usize, d: usize) -> Self {
        let mut codes = vec![0u8; n * d];
        let cuts: Vec<Vec<f32>> = (0..d)
            .map(|f| {
                let mut col: Vec<f32> = (0..n).map(|i| x[i * d + f]).collect();
                col.sort_by(f32::total_cmp);
                col.dedup();
                col.pop();
                if col.len() > MAX_CUTS {
                    let k = col.len();
                    let mut q: Vec<f32> = (1..=MAX_CUTS).map(|j| col[(j * k / (MAX_CUTS + 1)).min(k - 1)]).collect();
                    q.dedup();
                    q
                } else {
                    col
                }
            })
            .collect();
        for (f, c) in cuts.iter().enumerate() {
            for i in 0..n {
                let v = x[i * d + f];
                codes[f * n + i] = c.partition_point(|&t| t < v) as u8;
            }
        }
        BinnedRows { n, d, codes, cuts }
    }
}

struct TreeBuilder<'a> {
    data: &'a BinnedRows,
    y: &'a [bool],
    max_depth: usize,
    max_features: usize,
    min_samples_split: usize,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, rows: &[u32]) -> usize {
        let pos = rows.iter().filter(|&&r| self.y[r as usize]).count();
        self.nodes.push(Node::Leaf { n_samples: rows.len(), value: pos as f64 / rows.len().max(1) as f64 });
        self.nodes.len() - 1
    }

    /// Best split among a random subset of features: `(feature, cut code, weighted child impurity)`.
    fn best_split(&self, rows: &[u32], rng: &mut ChaCha8Rng) -> Option<(usize, usize, f64)> {
        let n = rows.len() as f64;
        let mut best: Option<(usize, usize, f64)> = None;
        let mut tot = [0f64; MAX_CUTS + 1];
        let mut posc = [0f64; MAX_CUTS + 1];
        for f in sample_indices(rng, self.data.d, self.max_features).into_iter() {
            let ncut = self.data.cuts[f].len();
            if ncut == 0 {
                continue;
            }
            tot[..=ncut].fill(0.0);
            posc[..=ncut].fill(0.0);
            let col = &self.data.codes[f * self.data.n..(f + 1) * self.data.n];
            for &r in rows {
                let b = col[r as usize] as usize;
                tot[b] += 1.0;
                if self.y[r as usize] {
                    posc[b] += 1.0;
                }
            }
            let total_pos: f64 = posc[..=ncut].iter().sum();
            let (mut nl, mut pl) = (0.0, 0.0);
            for b in 0..ncut {
                nl += tot[b];
                pl += posc[b];
                let nr = n - nl;
                if nl == 0.0 || nr == 0.0 {
                    continue;
                }
                let w = (nl * gini(pl, nl) + nr * gini(total_pos - pl, nr)) / n;
                if best.is_none_or(|(_, _, bw)| w < bw - 1e-15) {
                    best = Some((f, b, w));
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<u32>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = rows.len();
        let pos = rows.iter().filter(|&&r| self.y[r as usize]).count();
        let imp = gini(pos as f64, n as f64);
        if depth >= self.max_depth || n < self.min_samples_split || imp == 0.0 {
            return self.leaf(&rows);
        }
        let Some((f, b, w)) = self.best_split(&rows, rng) else {
            return self.leaf(&rows);
        };
        let col = &self.data.codes[f * self.data.n..(f + 1) * self.data.n];
        let (l, r): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| (col[i as usize] as usize) <= b);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf { n_samples: n, value: 0.0 });
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature: f,
            threshold: self.data.cuts[f][b],
            left,
            right,
            n_samples: n,
            impurity: imp,
            impurity_decrease: (imp - w).max(0.0),
        };
        me
    }
}

/// Trains a forest on row-major `x` (`n x d`) with binary labels.
pub fn train_random_forest(x: &[f32], y: &[bool], d: usize, cfg: &ForestConfig) -> Result<RandomForest> {
    if d == 0 || x.len() % d != 0 || x.len() / d != y.len() {
        return shape_err(format!("random forest: {} values, {} labels, {d} features", x.len(), y.len()));
    }
    if cfg.n_trees == 0 {
        return Err(Error::Config("random forest needs at least one tree".into()));
    }
    let n = y.len();
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == n {
        return Err(Error::Data("random forest needs both classes in the labels".into()));
    }
    let max_features = cfg.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d);
    let data = BinnedRows::new(x, n, d);
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64 + 1);
            let rows: Vec<u32> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n) as u32).collect()
            } else {
                (0..n as u32).collect()
            };
            let mut b = TreeBuilder {
                data: &data,
                y,
                max_depth: cfg.max_depth,
                max_features,
                min_samples_split: cfg.min_samples_split.max(2),
                nodes: Vec::new(),
            };
            b.build(rows, 0, &mut rng);
            DecisionTree { n_features: d, nodes: b.nodes }
        })
        .collect();
    RandomForest::from_trees(trees, cfg.max_depth, cfg.seed)
}
