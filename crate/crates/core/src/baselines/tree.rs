//! Histogram-binned CART trees and bagged forests.
//!
//! Features are cut into at most [`MAX_BINS`] bins once per training set. A
//! split sends `x <= threshold` left. Split search visits features in index
//! order and thresholds left to right, keeping the first best candidate, so
//! ties go to the lowest feature index.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::Matrix;
use crate::exec::Exec;
use crate::sampler::rng_for;
use rand::Rng;

pub const MAX_BINS: usize = 32;
const GAIN_EPS: f64 = 1e-12;

/// Bin thresholds per feature plus the column-major binned training data.
#[derive(Debug, Clone)]
pub struct BinnedData {
    pub n_rows: usize,
    pub n_features: usize,
    pub thresholds: Vec<Vec<f64>>,
    bins: Vec<u8>,
}

fn feature_thresholds(values: &mut [f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut uniq: Vec<f64> = values.to_vec();
    uniq.dedup();
    if uniq.len() <= 1 {
        return Vec::new();
    }
    if uniq.len() <= MAX_BINS {
        return uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let n = values.len();
    let max = uniq[uniq.len() - 1];
    let mut out: Vec<f64> = (1..MAX_BINS).map(|q| values[q * n / MAX_BINS]).filter(|v| *v < max).collect();
    out.dedup();
    out
}

impl BinnedData {
    pub fn new(x: &Matrix, exec: Exec) -> BinnedData {
        let thresholds = exec.map_range(x.n_cols, |j| {
            let mut col: Vec<f64> = (0..x.n_rows).map(|i| x.get(i, j)).collect();
            feature_thresholds(&mut col)
        });
        let columns = exec.map_range(x.n_cols, |j| {
            (0..x.n_rows)
                .map(|i| bin_of(&thresholds[j], x.get(i, j)))
                .collect::<Vec<u8>>()
        });
        BinnedData {
            n_rows: x.n_rows,
            n_features: x.n_cols,
            thresholds,
            bins: columns.concat(),
        }
    }

    fn bin(&self, feature: usize, row: usize) -> usize {
        self.bins[feature * self.n_rows + row] as usize
    }
}

fn bin_of(thresholds: &[f64], x: f64) -> u8 {
    thresholds.partition_point(|t| *t < x) as u8
}

/// What the tree fits.
pub enum Target<'a> {
    /// Class labels, split by Gini impurity; leaves hold class distributions.
    Classes { y: &'a [usize], n_classes: usize },
    /// Gradient/hessian pairs, split by Newton gain; leaves hold `-G / (H + λ)`.
    Gradients { g: &'a [f64], h: &'a [f64], lambda: f64 },
}

impl Target<'_> {
    fn width(&self) -> usize {
        match self {
            Target::Classes { n_classes, .. } => *n_classes,
            Target::Gradients { .. } => 2,
        }
    }

    fn add(&self, row: usize, w: f64, stats: &mut [f64]) {
        match self {
            Target::Classes { y, .. } => stats[y[row]] += w,
            Target::Gradients { g, h, .. } => {
                stats[0] += w * g[row];
                stats[1] += w * h[row];
            }
        }
    }

    /// Higher is better; split gain is `score(L) + score(R) - score(parent)`.
    fn score(&self, stats: &[f64]) -> f64 {
        match self {
            Target::Classes { .. } => {
                let total: f64 = stats.iter().sum();
                if total <= 0.0 {
                    return 0.0;
                }
                stats.iter().map(|c| c * c).sum::<f64>() / total - total
            }
            Target::Gradients { lambda, .. } => stats[0] * stats[0] / (stats[1] + lambda),
        }
    }

    fn leaf(&self, stats: &[f64]) -> Vec<f64> {
        match self {
            Target::Classes { .. } => {
                let total: f64 = stats.iter().sum();
                if total <= 0.0 {
                    return vec![1.0 / stats.len() as f64; stats.len()];
                }
                stats.iter().map(|c| c / total).collect()
            }
            Target::Gradients { lambda, .. } => vec![-stats[0] / (stats[1] + lambda)],
        }
    }

    /// Impure class nodes may split at zero gain (XOR-style interactions
    /// only pay off one level down).
    fn may_split_at_zero_gain(&self, stats: &[f64]) -> bool {
        match self {
            Target::Classes { .. } => stats.iter().filter(|c| **c > 0.0).count() > 1,
            Target::Gradients { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features considered per node; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 8,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

struct Builder<'a> {
    data: &'a BinnedData,
    target: &'a Target<'a>,
    weights: &'a [f64],
    params: TreeParams,
    rng: Option<ChaCha8Rng>,
    nodes: Vec<Node>,
}

struct Best {
    gain: f64,
    feature: usize,
    bin: usize,
}

impl Builder<'_> {
    fn node_stats(&self, rows: &[u32]) -> Vec<f64> {
        let mut stats = vec![0.0; self.target.width()];
        for &r in rows {
            self.target.add(r as usize, self.weights[r as usize], &mut stats);
        }
        stats
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.data.n_features;
        match (self.params.max_features, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < d => {
                let mut f = rand::seq::index::sample(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, rows: &[u32], parent: &[f64]) -> Option<Best> {
        let width = self.target.width();
        let parent_score = self.target.score(parent);
        let allow_zero = self.target.may_split_at_zero_gain(parent);
        let mut best: Option<Best> = None;
        for f in self.candidate_features() {
            let n_bins = self.data.thresholds[f].len() + 1;
            if n_bins < 2 {
                continue;
            }
            let mut hist = vec![0.0; n_bins * width];
            let mut counts = vec![0usize; n_bins];
            for &r in rows {
                let b = self.data.bin(f, r as usize);
                self.target
                    .add(r as usize, self.weights[r as usize], &mut hist[b * width..(b + 1) * width]);
                counts[b] += 1;
            }
            let mut left = vec![0.0; width];
            let mut left_n = 0;
            for b in 0..n_bins - 1 {
                for k in 0..width {
                    left[k] += hist[b * width + k];
                }
                left_n += counts[b];
                if left_n == 0 || left_n == rows.len() {
                    continue;
                }
                let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                let gain = self.target.score(&left) + self.target.score(&right) - parent_score;
                let acceptable = gain > GAIN_EPS || (allow_zero && gain > -GAIN_EPS);
                let better = best.as_ref().is_none_or(|cur| gain > cur.gain + GAIN_EPS);
                if acceptable && better {
                    best = Some(Best { gain, feature: f, bin: b });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize) -> usize {
        let stats = self.node_stats(rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.target.leaf(&stats),
        });
        if depth >= self.params.max_depth || rows.len() < self.params.min_samples_split.max(2) {
            return id;
        }
        let Some(best) = self.best_split(rows, &stats) else {
            return id;
        };
        let data = self.data;
        let (mut lo, mut hi) = (0, rows.len());
        while lo < hi {
            if data.bin(best.feature, rows[lo] as usize) <= best.bin {
                lo += 1;
            } else {
                hi -= 1;
                rows.swap(lo, hi);
            }
        }
        let (l_rows, r_rows) = rows.split_at_mut(lo);
        let left = self.grow(l_rows, depth + 1);
        let right = self.grow(r_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: data.thresholds[best.feature][best.bin],
            left,
            right,
        };
        id
    }
}

impl Tree {
    /// Grow a tree on the rows with positive weight.
    pub fn fit(data: &BinnedData, target: &Target<'_>, weights: &[f64], params: TreeParams, rng: Option<ChaCha8Rng>) -> Tree {
        let mut rows: Vec<u32> = (0..data.n_rows as u32).filter(|&r| weights[r as usize] > 0.0).collect();
        let mut b = Builder {
            data,
            target,
            weights,
            params,
            rng,
            nodes: Vec::new(),
        };
        b.grow(&mut rows, 0);
        Tree { nodes: b.nodes }
    }

    pub fn leaf_value(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    /// Features per node; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(data: &BinnedData, y: &[usize], n_classes: usize, params: &ForestParams, exec: Exec) -> Forest {
        let d = data.n_features;
        let max_features = params
            .max_features
            .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1))
            .clamp(1, d.max(1));
        let target = Target::Classes { y, n_classes };
        let trees = exec.map_range(params.n_estimators, |t| {
            let mut rng = rng_for(params.seed, t as u64);
            let mut weights = vec![if params.bootstrap { 0.0 } else { 1.0 }; data.n_rows];
            if params.bootstrap {
                for _ in 0..data.n_rows {
                    weights[rng.random_range(0..data.n_rows)] += 1.0;
                }
            }
            let tp = TreeParams {
                max_depth: params.max_depth,
                min_samples_split: 2,
                max_features: Some(max_features),
            };
            Tree::fit(data, &target, &weights, tp, Some(rng))
        });
        Forest { trees }
    }

    pub fn proba(&self, x: &[f64], n_classes: usize) -> Vec<f64> {
        let mut p = vec![0.0; n_classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf_value(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len().max(1) as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }
}
