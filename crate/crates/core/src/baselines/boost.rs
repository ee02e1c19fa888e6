//! AdaBoost (SAMME over depth-1 stumps) and one-vs-rest gradient-boosted trees.

use serde::{Deserialize, Serialize};

use super::argmax;
use super::encode::Matrix;
use super::tree::{BinnedData, Target, Tree, TreeParams};
use crate::exec::Exec;

const MIN_ERR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoost {
    pub stumps: Vec<Tree>,
    pub alphas: Vec<f64>,
}

impl AdaBoost {
    pub fn fit(x: &Matrix, data: &BinnedData, y: &[usize], n_classes: usize, rounds: usize) -> AdaBoost {
        let n = y.len();
        let k = n_classes as f64;
        let mut w = vec![1.0; n];
        let mut model = AdaBoost {
            stumps: Vec::new(),
            alphas: Vec::new(),
        };
        let target = Target::Classes { y, n_classes };
        let params = TreeParams {
            max_depth: 1,
            ..Default::default()
        };
        for _ in 0..rounds {
            let stump = Tree::fit(data, &target, &w, params, None);
            let miss: Vec<bool> = (0..n).map(|i| argmax(stump.leaf_value(x.row(i))) != y[i]).collect();
            let total: f64 = w.iter().sum();
            let err = miss.iter().zip(&w).filter(|(m, _)| **m).map(|(_, wi)| wi).sum::<f64>() / total;
            if err >= 1.0 - 1.0 / k {
                if model.stumps.is_empty() {
                    model.stumps.push(stump);
                    model.alphas.push(1.0);
                }
                break;
            }
            let e = err.max(MIN_ERR);
            let alpha = ((1.0 - e) / e).ln() + (k - 1.0).ln();
            model.stumps.push(stump);
            model.alphas.push(alpha);
            if err <= MIN_ERR {
                break;
            }
            for (wi, m) in w.iter_mut().zip(&miss) {
                if *m {
                    *wi *= alpha.exp();
                }
            }
            let scale = n as f64 / w.iter().sum::<f64>();
            w.iter_mut().for_each(|wi| *wi *= scale);
        }
        model
    }

    /// Alpha-weighted votes, normalized to sum to 1.
    pub fn scores(&self, x: &[f64], n_classes: usize) -> Vec<f64> {
        let mut s = vec![0.0; n_classes];
        for (stump, alpha) in self.stumps.iter().zip(&self.alphas) {
            s[argmax(stump.leaf_value(x))] += alpha;
        }
        let total: f64 = s.iter().sum();
        if total > 0.0 {
            s.iter_mut().for_each(|v| *v /= total);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
}

/// One binary logistic booster per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    pub init: Vec<f64>,
    pub trees: Vec<Vec<Tree>>,
    pub learning_rate: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Gbdt {
    pub fn fit(x: &Matrix, data: &BinnedData, y: &[usize], n_classes: usize, params: &GbdtParams, exec: Exec) -> Gbdt {
        let n = y.len();
        let weights = vec![1.0; n];
        let per_class = exec.map_range(n_classes, |k| {
            let pos = y.iter().filter(|c| **c == k).count() as f64;
            let p0 = (pos / n.max(1) as f64).clamp(1e-6, 1.0 - 1e-6);
            let init = (p0 / (1.0 - p0)).ln();
            let mut f = vec![init; n];
            let mut trees = Vec::with_capacity(params.rounds);
            for _ in 0..params.rounds {
                let (g, h): (Vec<f64>, Vec<f64>) = (0..n)
                    .map(|i| {
                        let p = sigmoid(f[i]);
                        let t = if y[i] == k { 1.0 } else { 0.0 };
                        (p - t, (p * (1.0 - p)).max(1e-12))
                    })
                    .unzip();
                let target = Target::Gradients {
                    g: &g,
                    h: &h,
                    lambda: params.lambda,
                };
                let tp = TreeParams {
                    max_depth: params.max_depth,
                    ..Default::default()
                };
                let tree = Tree::fit(data, &target, &weights, tp, None);
                for (i, fi) in f.iter_mut().enumerate() {
                    *fi += params.learning_rate * tree.leaf_value(x.row(i))[0];
                }
                trees.push(tree);
            }
            (init, trees)
        });
        let (init, trees) = per_class.into_iter().unzip();
        Gbdt {
            init,
            trees,
            learning_rate: params.learning_rate,
        }
    }

    /// Per-class one-vs-rest probabilities (not normalized across classes).
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.init
            .iter()
            .zip(&self.trees)
            .map(|(init, trees)| {
                let f = init + trees.iter().map(|t| self.learning_rate * t.leaf_value(x)[0]).sum::<f64>();
                sigmoid(f)
            })
            .collect()
    }
}
