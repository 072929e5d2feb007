//! Random Forest over flattened packet series: CART trees with Gini splits,
//! bootstrap resampling and per-split feature subsampling.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_estimators: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    /// Features examined per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_estimators: 100, max_depth: None, max_features: None, bootstrap: true, seed: 0 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::config("n_estimators must be at least 1"));
        }
        if self.max_features == Some(0) {
            return Err(Error::config("max_features must be positive"));
        }
        Ok(())
    }

    fn features_per_split(&self, d: usize) -> usize {
        self.max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { histogram: Vec<u64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in preorder; the root is node 0. Samples with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf(&self, x: &[f64]) -> &[u64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { histogram } => return histogram,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Majority class of the leaf reached by `x`; ties go to the lowest label.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_lowest(self.leaf(x))
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub classes: usize,
    pub features: usize,
    pub trees: Vec<Tree>,
}

fn argmax_lowest(counts: &[u64]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

fn gini(counts: &[u64], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    max_depth: Option<usize>,
    mtry: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<u64> {
        let mut h = vec![0u64; self.classes];
        for &i in idx {
            h[self.y[i]] += 1;
        }
        h
    }

    /// Lowest weighted child impurity over midpoints of `feature`, if the
    /// feature is not constant on `idx`.
    fn best_on_feature(&self, idx: &mut [usize], feature: usize, total: &[u64]) -> Option<BestSplit> {
        idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
        let n = idx.len() as u64;
        let mut left = vec![0u64; self.classes];
        let mut right = total.to_vec();
        let mut best: Option<BestSplit> = None;
        for k in 0..idx.len() - 1 {
            let c = self.y[idx[k]];
            left[c] += 1;
            right[c] -= 1;
            let (a, b) = (self.x[idx[k]][feature], self.x[idx[k + 1]][feature]);
            if a == b {
                continue;
            }
            let nl = k as u64 + 1;
            let nr = n - nl;
            let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.as_ref().is_none_or(|s| score < s.score) {
                let mid = a + (b - a) / 2.0;
                // Guard against midpoints that round onto the upper value.
                let threshold = if mid < b { mid } else { a };
                best = Some(BestSplit { score, feature, threshold });
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut Rng) -> usize {
        let histogram = self.histogram(idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { histogram: histogram.clone() });
        let pure = histogram.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || idx.len() < 2 || self.max_depth.is_some_and(|m| depth >= m) {
            return id;
        }
        let d = self.x[0].len();
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        // Examine `mtry` features; keep drawing past constant ones until a
        // usable split appears.
        let mut best: Option<BestSplit> = None;
        for (examined, &f) in order.iter().enumerate() {
            if examined >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.best_on_feature(idx, f, &histogram) {
                if best.as_ref().is_none_or(|b| s.score < b.score) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return id };
        let (f, t) = (split.feature, split.threshold);
        idx.sort_by(|&a, &b| (self.x[a][f] > t).cmp(&(self.x[b][f] > t)).then(a.cmp(&b)));
        let cut = idx.partition_point(|&i| self.x[i][f] <= t);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature: f, threshold: t, left, right };
        id
    }
}

/// Fit a forest on rows `x` with labels `y` in `0..C`, where `C` = max label + 1.
pub fn fit_forest(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::data(format!("forest needs matching non-empty inputs, got {} rows and {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::data("forest rows must share a positive width"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::data("forest inputs must be finite"));
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let mtry = cfg.features_per_split(d);
    let n = x.len();
    let trees = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::rng_for(cfg.seed, &[stream::FOREST, t as u64]);
            let mut idx: Vec<usize> = if cfg.bootstrap { (0..n).map(|_| rng.gen_range(0..n)).collect() } else { (0..n).collect() };
            let mut b = Builder { x, y, classes, max_depth: cfg.max_depth, mtry, nodes: Vec::new() };
            b.grow(&mut idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { classes, features: d, trees })
}

/// Per-class vote counts of the trees for `x`.
pub fn forest_votes(forest: &Forest, x: &[f64]) -> Vec<u64> {
    let mut votes = vec![0u64; forest.classes];
    for t in &forest.trees {
        votes[t.predict(x)] += 1;
    }
    votes
}

/// Majority vote over trees; ties go to the lowest label.
pub fn forest_predict(forest: &Forest, x: &[f64]) -> usize {
    argmax_lowest(&forest_votes(forest, x))
}

/// Majority vote restricted to `allowed` labels (sorted); votes for other
/// labels are discarded.
pub fn forest_predict_masked(forest: &Forest, x: &[f64], allowed: &[usize]) -> Result<usize> {
    if allowed.is_empty() || allowed.iter().any(|&c| c >= forest.classes) {
        return Err(Error::contract("masked prediction needs labels known to the forest"));
    }
    let votes = forest_votes(forest, x);
    let mut best = allowed[0];
    for &c in allowed {
        if votes[c] > votes[best] || (votes[c] == votes[best] && c < best) {
            best = c;
        }
    }
    Ok(best)
}

/// `(total nodes, average tree depth)`.
pub fn forest_stats(forest: &Forest) -> (usize, f64) {
    let nodes = forest.trees.iter().map(Tree::node_count).sum();
    let depth = forest.trees.iter().map(|t| t.depth() as f64).sum::<f64>() / forest.trees.len().max(1) as f64;
    (nodes, depth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(class: usize, classes: usize) -> Tree {
        let mut histogram = vec![0; classes];
        histogram[class] = 1;
        Tree { nodes: vec![Node::Leaf { histogram }] }
    }

    #[test]
    fn single_class_gives_single_leaves() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 1.0]).collect();
        let f = fit_forest(&x, &[0; 20], &ForestConfig { n_estimators: 5, ..Default::default() }).unwrap();
        assert_eq!(forest_stats(&f), (5, 0.0));
        assert_eq!(forest_predict(&f, &[3.0, 7.0]), 0);
    }

    #[test]
    fn xor_is_fitted_exactly() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let (a, b) = ((i % 2) as f64, ((i / 2) % 2) as f64);
            x.push(vec![a + 0.01 * i as f64 / 40.0, b]);
            y.push((a as usize) ^ (b as usize));
        }
        let f = fit_forest(&x, &y, &ForestConfig { n_estimators: 25, ..Default::default() }).unwrap();
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!(forest_predict(&f, r), l);
        }
    }

    #[test]
    fn voting_rules() {
        let f = Forest { classes: 3, features: 1, trees: vec![leaf(0, 3), leaf(0, 3), leaf(1, 3)] };
        assert_eq!(forest_predict(&f, &[0.0]), 0);
        let tie = Forest { classes: 3, features: 1, trees: vec![leaf(2, 3), leaf(1, 3)] };
        assert_eq!(forest_predict(&tie, &[0.0]), 1);
        assert_eq!(forest_predict_masked(&f, &[0.0], &[1, 2]).unwrap(), 1);
        assert_eq!(forest_predict_masked(&f, &[0.0], &[2]).unwrap(), 2);
    }

    #[test]
    fn stump_stats() {
        let t = Tree {
            nodes: vec![
                Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
                Node::Leaf { histogram: vec![1, 0] },
                Node::Leaf { histogram: vec![0, 1] },
            ],
        };
        let f = Forest { classes: 2, features: 1, trees: vec![t] };
        assert_eq!(forest_stats(&f), (3, 1.0));
        assert_eq!(forest_predict(&f, &[0.2]), 0);
        assert_eq!(forest_predict(&f, &[0.9]), 1);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(fit_forest(&[], &[], &ForestConfig::default()).is_err());
        assert!(ForestConfig { n_estimators: 0, ..Default::default() }.validate().is_err());
    }
}
