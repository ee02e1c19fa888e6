//! Multinomial logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::encode::Matrix;
use crate::exec::Exec;

const CHUNK: usize = 2048;

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Weights are `n_classes` rows of `n_features + 1` (bias last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub n_features: usize,
    pub n_classes: usize,
    pub params: Vec<f64>,
}

fn logits(params: &[f64], x: &[f64], n_classes: usize) -> Vec<f64> {
    let stride = x.len() + 1;
    (0..n_classes)
        .map(|c| {
            let w = &params[c * stride..(c + 1) * stride];
            w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
        })
        .collect()
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2` (bias excluded), and its gradient.
pub fn loss_and_grad(params: &[f64], x: &Matrix, y: &[usize], n_classes: usize, l2: f64, exec: Exec) -> (f64, Vec<f64>) {
    let d = x.n_cols;
    let stride = d + 1;
    let n_chunks = x.n_rows.div_ceil(CHUNK);
    let partials = exec.map_range(n_chunks, |c| {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for i in c * CHUNK..((c + 1) * CHUNK).min(x.n_rows) {
            let row = x.row(i);
            let p = softmax(&logits(params, row, n_classes));
            loss -= p[y[i]].max(f64::MIN_POSITIVE).ln();
            for (k, pk) in p.iter().enumerate() {
                let r = pk - if k == y[i] { 1.0 } else { 0.0 };
                let g = &mut grad[k * stride..(k + 1) * stride];
                for (gj, xj) in g[..d].iter_mut().zip(row) {
                    *gj += r * xj;
                }
                g[d] += r;
            }
        }
        (loss, grad)
    });
    let n = x.n_rows.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    for k in 0..n_classes {
        for j in 0..d {
            let w = params[k * stride + j];
            loss += 0.5 * l2 * w * w;
            grad[k * stride + j] += l2 * w;
        }
    }
    (loss, grad)
}

impl LogReg {
    /// Zero-initialized full-batch gradient descent for a fixed number of epochs.
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, epochs: usize, learning_rate: f64, l2: f64, exec: Exec) -> LogReg {
        let mut params = vec![0.0; n_classes * (x.n_cols + 1)];
        for _ in 0..epochs {
            let (_, grad) = loss_and_grad(&params, x, y, n_classes, l2, exec);
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= learning_rate * g;
            }
        }
        LogReg {
            n_features: x.n_cols,
            n_classes,
            params,
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        softmax(&logits(&self.params, x, self.n_classes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let z: Vec<f64> = (0..7).map(|_| rng.random_range(-50.0..50.0)).collect();
            assert!((softmax(&z).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (n, d, k) = (12, 4, 3);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let x = Matrix::from_rows(&rows);
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let params: Vec<f64> = (0..k * (d + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, grad) = loss_and_grad(&params, &x, &y, k, 0.1, Exec::Sequential);
            let h = 1e-5;
            for j in 0..params.len() {
                let mut up = params.clone();
                let mut dn = params.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (loss_and_grad(&up, &x, &y, k, 0.1, Exec::Sequential).0
                    - loss_and_grad(&dn, &x, &y, k, 0.1, Exec::Sequential).0)
                    / (2.0 * h);
                let rel = (fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-8);
                assert!(rel < 1e-6, "param {j}: fd {fd} analytic {}", grad[j]);
            }
        }
    }
}
