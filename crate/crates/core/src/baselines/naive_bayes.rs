//! Categorical naive Bayes with Laplace smoothing.
//!
//! Works field by field on the encoder's blocks: one-hot blocks are one
//! categorical feature (Missing is its own category), booleans have three
//! states, numerics are cut into train quantile bins plus Missing, and each
//! multi-hot column is a separate binary feature.

use serde::{Deserialize, Serialize};

use super::encode::{Encoder, FieldEncoding, Matrix};

pub const ALPHA: f64 = 1.0;
const NUMERIC_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NbFeature {
    OneHot { start: usize, width: usize },
    Flag { col: usize },
    Boolean { value: usize, missing: usize },
    Numeric { value: usize, missing: usize, edges: Vec<f64> },
}

impl NbFeature {
    fn n_cats(&self) -> usize {
        match self {
            NbFeature::OneHot { width, .. } => *width,
            NbFeature::Flag { .. } => 2,
            NbFeature::Boolean { .. } => 3,
            NbFeature::Numeric { edges, .. } => edges.len() + 2,
        }
    }

    fn category(&self, x: &[f64]) -> usize {
        match self {
            NbFeature::OneHot { start, width } => (0..*width).find(|k| x[start + k] > 0.5).unwrap_or(width - 1),
            NbFeature::Flag { col } => usize::from(x[*col] > 0.5),
            NbFeature::Boolean { value, missing } => {
                if x[*missing] > 0.5 {
                    2
                } else {
                    usize::from(x[*value] > 0.5)
                }
            }
            NbFeature::Numeric { value, missing, edges } => {
                if x[*missing] > 0.5 {
                    edges.len() + 1
                } else {
                    edges.partition_point(|e| *e < x[*value])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub features: Vec<NbFeature>,
    pub log_prior: Vec<f64>,
    /// `log_lik[f][c * n_cats(f) + v]`
    pub log_lik: Vec<Vec<f64>>,
}

fn quantile_edges(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    if values.is_empty() {
        return Vec::new();
    }
    let mut edges: Vec<f64> = (1..NUMERIC_BINS).map(|q| values[q * values.len() / NUMERIC_BINS]).collect();
    edges.dedup();
    edges
}

impl NaiveBayes {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, encoder: &Encoder) -> NaiveBayes {
        let mut features = Vec::new();
        for b in &encoder.blocks {
            match &b.encoding {
                FieldEncoding::OneHot { .. } => features.push(NbFeature::OneHot {
                    start: b.start,
                    width: b.encoding.width(),
                }),
                FieldEncoding::MultiHot { categories } => {
                    features.extend((0..categories.len()).map(|k| NbFeature::Flag { col: b.start + k }));
                }
                FieldEncoding::Boolean => features.push(NbFeature::Boolean {
                    value: b.start,
                    missing: b.missing_col(),
                }),
                FieldEncoding::Numeric { .. } => {
                    let present: Vec<f64> = x
                        .rows()
                        .filter(|r| r[b.missing_col()] < 0.5)
                        .map(|r| r[b.start])
                        .collect();
                    features.push(NbFeature::Numeric {
                        value: b.start,
                        missing: b.missing_col(),
                        edges: quantile_edges(present),
                    });
                }
            }
        }
        let mut class_n = vec![0.0; n_classes];
        for &c in y {
            class_n[c] += 1.0;
        }
        let total = y.len() as f64;
        let log_prior = class_n
            .iter()
            .map(|n| ((n + ALPHA) / (total + ALPHA * n_classes as f64)).ln())
            .collect();
        let log_lik = features
            .iter()
            .map(|f| {
                let k = f.n_cats();
                let mut counts = vec![0.0; n_classes * k];
                for (row, &c) in x.rows().zip(y) {
                    counts[c * k + f.category(row)] += 1.0;
                }
                counts
                    .iter()
                    .enumerate()
                    .map(|(i, n)| ((n + ALPHA) / (class_n[i / k] + ALPHA * k as f64)).ln())
                    .collect()
            })
            .collect();
        NaiveBayes {
            features,
            log_prior,
            log_lik,
        }
    }

    /// Posterior class probabilities.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut logp = self.log_prior.clone();
        for (f, table) in self.features.iter().zip(&self.log_lik) {
            let k = f.n_cats();
            let v = f.category(x);
            for (c, lp) in logp.iter_mut().enumerate() {
                *lp += table[c * k + v];
            }
        }
        super::logreg::softmax(&logp)
    }
}
