//! Classical baselines over encoded records.
//!
//! Six model kinds share one interface: [`train`] on an [`EncodedDataset`],
//! then [`FittedModel::predict`]. Fitted models carry their frozen encoder
//! and save to versioned JSON.

pub mod boost;
pub mod encode;
pub mod logreg;
pub mod naive_bayes;
pub mod tree;

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::{encode, encode_with, EncodedDataset, Encoder, Matrix};

use crate::exec::Exec;
use crate::model::{CrashRecord, Task};
use boost::{AdaBoost, Gbdt, GbdtParams};
use logreg::LogReg;
use naive_bayes::NaiveBayes;
use tree::{BinnedData, Forest, ForestParams, Target, Tree, TreeParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("row has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Tree,
    Forest,
    Adaboost,
    NaiveBayes,
    Gbdt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Forest,
        ModelKind::Tree,
        ModelKind::Adaboost,
        ModelKind::NaiveBayes,
        ModelKind::Logreg,
        ModelKind::Gbdt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::Adaboost => "adaboost",
            ModelKind::NaiveBayes => "naive_bayes",
            ModelKind::Gbdt => "gbdt",
        }
    }

    /// Name used in reports; substitutes say what they stand in for.
    pub fn report_label(self) -> &'static str {
        match self {
            ModelKind::NaiveBayes => "naive_bayes (Bayesian network stand-in)",
            ModelKind::Gbdt => "gbdt (CatBoost stand-in)",
            other => other.as_str(),
        }
    }
}

impl FromStr for ModelKind {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BaselineError::InvalidSpec(format!("unknown model kind {s:?}")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Boosting rounds (adaboost, gbdt) or gradient-descent epochs (logreg).
    pub rounds: usize,
    /// Features per split for the forest; `None` means `sqrt(d)`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> ModelSpec {
        let base = ModelSpec {
            kind,
            max_depth: 8,
            n_estimators: 1,
            learning_rate: 0.1,
            l2: 0.0,
            rounds: 1,
            max_features: None,
            bootstrap: true,
            seed: crate::sampler::DEFAULT_SEED,
        };
        match kind {
            ModelKind::Logreg => ModelSpec {
                learning_rate: 0.5,
                l2: 1e-4,
                rounds: 200,
                ..base
            },
            ModelKind::Tree => base,
            ModelKind::Forest => ModelSpec {
                max_depth: 10,
                n_estimators: 50,
                ..base
            },
            ModelKind::Adaboost => ModelSpec {
                max_depth: 1,
                rounds: 50,
                ..base
            },
            ModelKind::NaiveBayes => base,
            ModelKind::Gbdt => ModelSpec {
                max_depth: 3,
                rounds: 30,
                l2: 1.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::InvalidSpec(m.to_string()));
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.n_estimators == 0 || self.rounds == 0 {
            return bad("n_estimators and rounds must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be >= 0");
        }
        if self.max_features == Some(0) {
            return bad("max_features must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Fitted {
    Constant { class: usize },
    Logreg(LogReg),
    Tree(Tree),
    Forest(Forest),
    Adaboost(AdaBoost),
    NaiveBayes(NaiveBayes),
    Gbdt(Gbdt),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub task: Task,
    pub class_names: Vec<String>,
    /// Set when training data had fewer than two classes.
    pub degenerate: bool,
    pub encoder: Encoder,
    pub model: Fitted,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn train(spec: &ModelSpec, ds: &EncodedDataset, task: Task, exec: Exec) -> Result<FittedModel, BaselineError> {
    spec.validate()?;
    let k = ds.class_names.len();
    let mut present: Vec<usize> = ds.y.clone();
    present.sort_unstable();
    present.dedup();
    let wrap = |model, degenerate| FittedModel {
        format_version: FORMAT_VERSION,
        spec: spec.clone(),
        task,
        class_names: ds.class_names.clone(),
        degenerate,
        encoder: ds.encoder.clone(),
        model,
    };
    if present.len() < 2 {
        let class = present.first().copied().unwrap_or(0);
        log::warn!("{} training data has {} class(es); fitting a constant model", spec.kind, present.len());
        return Ok(wrap(Fitted::Constant { class }, true));
    }
    let x = &ds.x;
    let y = &ds.y;
    let model = match spec.kind {
        ModelKind::Logreg => Fitted::Logreg(LogReg::fit(x, y, k, spec.rounds, spec.learning_rate, spec.l2, exec)),
        ModelKind::NaiveBayes => Fitted::NaiveBayes(NaiveBayes::fit(x, y, k, &ds.encoder)),
        kind => {
            let data = BinnedData::new(x, exec);
            match kind {
                ModelKind::Tree => {
                    let params = TreeParams {
                        max_depth: spec.max_depth,
                        ..Default::default()
                    };
                    let target = Target::Classes { y, n_classes: k };
                    Fitted::Tree(Tree::fit(&data, &target, &vec![1.0; y.len()], params, None))
                }
                ModelKind::Forest => {
                    let params = ForestParams {
                        n_estimators: spec.n_estimators,
                        max_depth: spec.max_depth,
                        max_features: spec.max_features,
                        bootstrap: spec.bootstrap,
                        seed: spec.seed,
                    };
                    Fitted::Forest(Forest::fit(&data, y, k, &params, exec))
                }
                ModelKind::Adaboost => Fitted::Adaboost(AdaBoost::fit(x, &data, y, k, spec.rounds)),
                ModelKind::Gbdt => {
                    let params = GbdtParams {
                        rounds: spec.rounds,
                        max_depth: spec.max_depth,
                        learning_rate: spec.learning_rate,
                        lambda: spec.l2,
                    };
                    Fitted::Gbdt(Gbdt::fit(x, &data, y, k, &params, exec))
                }
                ModelKind::Logreg | ModelKind::NaiveBayes => unreachable!(),
            }
        }
    };
    Ok(wrap(model, false))
}

impl FittedModel {
    pub fn n_features(&self) -> usize {
        self.encoder.width()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Per-class scores for one encoded row.
    pub fn predict_scores(&self, row: &[f64]) -> Result<Vec<f64>, BaselineError> {
        if row.len() != self.n_features() {
            return Err(BaselineError::DimensionMismatch {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        let k = self.n_classes();
        Ok(match &self.model {
            Fitted::Constant { class } => {
                let mut s = vec![0.0; k];
                s[*class] = 1.0;
                s
            }
            Fitted::Logreg(m) => m.scores(row),
            Fitted::Tree(t) => t.leaf_value(row).to_vec(),
            Fitted::Forest(f) => f.proba(row, k),
            Fitted::Adaboost(a) => a.scores(row, k),
            Fitted::NaiveBayes(nb) => nb.scores(row),
            Fitted::Gbdt(g) => g.scores(row),
        })
    }

    pub fn predict(&self, x: &Matrix, exec: Exec) -> Result<Vec<usize>, BaselineError> {
        if x.n_cols != self.n_features() {
            return Err(BaselineError::DimensionMismatch {
                expected: self.n_features(),
                got: x.n_cols,
            });
        }
        exec.map_range(x.n_rows, |i| self.predict_scores(x.row(i)).map(|s| argmax(&s)))
            .into_iter()
            .collect()
    }

    /// Encode with the frozen encoder, then predict.
    pub fn predict_records(&self, records: &[CrashRecord], exec: Exec) -> Result<Vec<usize>, BaselineError> {
        self.predict(&self.encoder.encode(records, exec), exec)
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let text = serde_json::to_string(self).map_err(|e| BaselineError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FittedModel, BaselineError> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| BaselineError::Format(e.to_string()))?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(FORMAT_VERSION as u64) {
            return Err(BaselineError::Format(format!(
                "unsupported format_version {version:?} (expected {FORMAT_VERSION})"
            )));
        }
        serde_json::from_value(value).map_err(|e| BaselineError::Format(e.to_string()))
    }
}
