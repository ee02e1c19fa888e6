//! Confusion matrices, prevalence-weighted metrics and cross-model rank tables.
//!
//! Weighted averaging uses true-class support as the weight, so weighted
//! recall always equals accuracy. Per-class precision, recall and F1 treat
//! 0/0 as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Task;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("truth has {truth} labels but predictions have {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label index {0} is not a known class")]
    UnknownLabel(usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("model {model:?} has no value for {column}")]
    MissingCell { model: String, column: String },
    #[error("rank table needs at least two models, got {0}")]
    TooFewModels(usize),
    #[error("confusion matrices have different classes")]
    ClassMismatch,
}

/// Rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn empty(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<(), EvalError> {
        let k = self.n_classes();
        for label in [truth, pred] {
            if label >= k {
                return Err(EvalError::UnknownLabel(label));
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    /// Sum partial counts accumulated elsewhere (e.g. per worker).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if self.class_names != other.class_names {
            return Err(EvalError::ClassMismatch);
        }
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        Ok(())
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], class_names: &[String]) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::empty(class_names.to_vec());
    for (&t, &p) in truth.iter().zip(pred) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.n_classes())
        .map(|c| {
            let tp = cm.counts[c][c];
            let support = cm.row_total(c);
            let precision = ratio(tp, cm.col_total(c));
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                support,
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut m = Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for c in per_class(cm) {
        let w = c.support as f64 / total as f64;
        m.precision += w * c.precision;
        m.recall += w * c.recall;
        m.f1 += w * c.f1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Accuracy,
        MetricKind::Precision,
        MetricKind::Recall,
        MetricKind::F1,
    ];

    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            MetricKind::Accuracy => m.accuracy,
            MetricKind::Precision => m.precision,
            MetricKind::Recall => m.recall,
            MetricKind::F1 => m.f1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Precision => "precision",
            MetricKind::Recall => "recall",
            MetricKind::F1 => "f1",
        }
    }
}

/// The 12 rank columns, metric-major: accuracy injury/severity/type, precision ..., f1 ...
pub fn rank_columns() -> Vec<(MetricKind, Task)> {
    MetricKind::ALL
        .iter()
        .flat_map(|&m| Task::ALL.iter().map(move |&t| (m, t)))
        .collect()
}

/// One model's metrics across the three tasks. Cells may be missing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub injury: Option<Metrics>,
    pub severity: Option<Metrics>,
    pub accident_type: Option<Metrics>,
}

impl MetricRow {
    pub fn new(model: impl Into<String>) -> Self {
        MetricRow {
            model: model.into(),
            ..Default::default()
        }
    }

    pub fn task(&self, task: Task) -> Option<&Metrics> {
        match task {
            Task::Injury => self.injury.as_ref(),
            Task::Severity => self.severity.as_ref(),
            Task::AccidentType => self.accident_type.as_ref(),
        }
    }

    pub fn set(&mut self, task: Task, m: Metrics) {
        match task {
            Task::Injury => self.injury = Some(m),
            Task::Severity => self.severity = Some(m),
            Task::AccidentType => self.accident_type = Some(m),
        }
    }

    pub fn cell(&self, metric: MetricKind, task: Task) -> Option<f64> {
        self.task(task).map(|m| metric.of(m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub model: String,
    /// Rank per column in [`rank_columns`] order; 1 is best.
    pub ranks: Vec<f64>,
    pub score: f64,
}

/// Column-wise ranks (higher metric = better, ties share the average rank),
/// averaged per model and sorted ascending by that average.
pub fn rank_table(rows: &[MetricRow]) -> Result<Vec<RankedRow>, EvalError> {
    if rows.len() < 2 {
        return Err(EvalError::TooFewModels(rows.len()));
    }
    let columns = rank_columns();
    let mut grid = vec![vec![0.0; columns.len()]; rows.len()];
    for (r, row) in rows.iter().enumerate() {
        for (c, &(metric, task)) in columns.iter().enumerate() {
            grid[r][c] = row.cell(metric, task).ok_or_else(|| EvalError::MissingCell {
                model: row.model.clone(),
                column: format!("{}/{}", metric.as_str(), task),
            })?;
        }
    }
    let mut out: Vec<RankedRow> = rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let ranks: Vec<f64> = (0..columns.len())
                .map(|c| {
                    let v = grid[r][c];
                    let better = grid.iter().filter(|g| g[c] > v).count();
                    let equal = grid.iter().filter(|g| g[c] == v).count();
                    better as f64 + (equal as f64 + 1.0) / 2.0
                })
                .collect();
            let score = ranks.iter().sum::<f64>() / ranks.len() as f64;
            RankedRow {
                model: row.model.clone(),
                ranks,
                score,
            }
        })
        .collect();
    out.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.model.cmp(&b.model)));
    Ok(out)
}

/// One model's result on one task and evaluation subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub model: String,
    pub task: Task,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset: String,
    pub n_cases: usize,
    pub results: Vec<TaskResult>,
    pub ranks: Vec<RankedRow>,
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

impl EvalReport {
    pub fn build(subset: impl Into<String>, n_cases: usize, results: Vec<TaskResult>) -> Self {
        let mut rows: Vec<MetricRow> = Vec::new();
        for r in &results {
            let idx = match rows.iter().position(|m| m.model == r.model) {
                Some(i) => i,
                None => {
                    rows.push(MetricRow::new(r.model.clone()));
                    rows.len() - 1
                }
            };
            rows[idx].set(r.task, r.metrics);
        }
        // Ranks only when every model has all three tasks.
        let ranks = rank_table(&rows).unwrap_or_default();
        EvalReport {
            subset: subset.into(),
            n_cases,
            results,
            ranks,
        }
    }

    /// Aligned plain-text tables, metrics rounded to 3 decimals.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Evaluation subset: {} ({} cases)", self.subset, self.n_cases);
        for task in Task::ALL {
            let results: Vec<&TaskResult> = self.results.iter().filter(|r| r.task == task).collect();
            if results.is_empty() {
                continue;
            }
            let _ = writeln!(s, "\n[{task}]");
            let nw = results.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
            let _ = writeln!(
                s,
                "{:<nw$} {:>9} {:>9} {:>9} {:>9}",
                "model", "accuracy", "precision", "recall", "f1"
            );
            for r in &results {
                let m = r.metrics;
                let _ = writeln!(
                    s,
                    "{:<nw$} {:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                    r.model, m.accuracy, m.precision, m.recall, m.f1
                );
            }
            for r in &results {
                let _ = writeln!(s, "\nconfusion {} / {} (rows = truth)", r.model, task);
                let w = r.confusion.class_names.iter().map(|c| c.len()).max().unwrap_or(1).max(5);
                let _ = write!(s, "{:>w$}", "");
                for c in &r.confusion.class_names {
                    let _ = write!(s, " {c:>w$}");
                }
                s.push('\n');
                for (name, row) in r.confusion.class_names.iter().zip(&r.confusion.counts) {
                    let _ = write!(s, "{name:>w$}");
                    for v in row {
                        let _ = write!(s, " {v:>w$}");
                    }
                    s.push('\n');
                }
            }
        }
        if !self.ranks.is_empty() {
            let _ = writeln!(s, "\n[average rank over {} columns]", rank_columns().len());
            let nw = self.ranks.iter().map(|r| r.model.len()).max().unwrap_or(0);
            for (i, r) in self.ranks.iter().enumerate() {
                let _ = writeln!(s, "{:>2}. {:<nw$} {:>6.2}", i + 1, r.model, r.score);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let t = [0, 1, 2, 2, 1];
        let cm = confusion(&t, &t, &names(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(cm.counts[i][j], 0);
                }
            }
        }
        let m = metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_predictions_fill_one_column() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 0, 0, 0], &names(3)).unwrap();
        assert_eq!(cm.col_total(0), 4);
        assert_eq!(cm.col_total(1) + cm.col_total(2), 0);
    }

    #[test]
    fn hand_counted_six_cases() {
        // truth 0 0 1 1 2 2 / pred 0 1 1 1 0 2, counted by hand:
        //        p0 p1 p2
        //   t0 [ 1, 1, 0 ]
        //   t1 [ 0, 2, 0 ]
        //   t2 [ 1, 0, 1 ]
        let cm = confusion(&[0, 0, 1, 1, 2, 2], &[0, 1, 1, 1, 0, 2], &names(3)).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
        let m = metrics(&cm).unwrap();
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
        // precision: c0 1/2, c1 2/3, c2 1/1; each class weight 1/3
        assert!((m.precision - (0.5 + 2.0 / 3.0 + 1.0) / 3.0).abs() < 1e-15);
        // recall: 1/2, 1, 1/2; f1: 1/2, 4/5, 2/3
        assert!((m.recall - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.f1 - (0.5 + 0.8 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            confusion(&[0, 1], &[0], &names(2)),
            Err(EvalError::LengthMismatch { truth: 2, pred: 1 })
        ));
        assert_eq!(confusion(&[0, 5], &[0, 1], &names(2)), Err(EvalError::UnknownLabel(5)));
        assert_eq!(metrics(&ConfusionMatrix::empty(names(2))), Err(EvalError::EmptyMatrix));
    }

    #[test]
    fn merge_partial_counts() {
        let truth = [0, 1, 2, 0, 1, 2, 2];
        let pred = [0, 2, 2, 1, 1, 0, 2];
        let whole = confusion(&truth, &pred, &names(3)).unwrap();
        let mut a = confusion(&truth[..3], &pred[..3], &names(3)).unwrap();
        a.merge(&confusion(&truth[3..], &pred[3..], &names(3)).unwrap()).unwrap();
        assert_eq!(a, whole);
        assert_eq!(a.merge(&ConfusionMatrix::empty(names(2))), Err(EvalError::ClassMismatch));
    }

    fn uniform_row(model: &str, v: f64) -> MetricRow {
        let m = Metrics {
            accuracy: v,
            precision: v,
            recall: v,
            f1: v,
        };
        MetricRow {
            model: model.into(),
            injury: Some(m),
            severity: Some(m),
            accident_type: Some(m),
        }
    }

    #[test]
    fn dominance_ranks() {
        let ranked = rank_table(&[uniform_row("b", 0.2), uniform_row("a", 0.9)]).unwrap();
        assert_eq!(ranked[0].model, "a");
        assert_eq!(ranked[0].score, 1.0);
        assert_eq!(ranked[1].score, 2.0);
    }

    #[test]
    fn ties_share_average_rank() {
        let mut a = uniform_row("a", 0.5);
        let b = uniform_row("b", 0.5);
        a.injury.as_mut().unwrap().accuracy = 0.5;
        let ranked = rank_table(&[a, b]).unwrap();
        assert!(ranked.iter().all(|r| r.ranks.iter().all(|&x| x == 1.5)));
    }

    #[test]
    fn rank_errors() {
        assert_eq!(rank_table(&[uniform_row("a", 0.1)]), Err(EvalError::TooFewModels(1)));
        let mut partial = uniform_row("p", 0.1);
        partial.severity = None;
        assert!(matches!(
            rank_table(&[uniform_row("a", 0.1), partial]),
            Err(EvalError::MissingCell { .. })
        ));
    }
}
