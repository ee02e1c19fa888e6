//! Record → dense numeric matrix.
//!
//! Column layout follows dictionary field order. Categoricals get one column
//! per category plus a Missing column, numerics a standardized value plus a
//! Missing indicator, booleans a 0/1 value plus a Missing indicator, and
//! list-valued fields one column per category (multi-hot) plus Missing.
//! The encoder is fitted on training records and frozen afterwards.

use serde::{Deserialize, Serialize};

use crate::dictionary::{FeatureDictionary, FieldKind};
use crate::exec::Exec;
use crate::model::{CrashRecord, FieldValue, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Matrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    /// Build from rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        Matrix {
            n_rows: rows.len(),
            n_cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(|i| self.row(i))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            n_rows: idx.len(),
            n_cols: self.n_cols,
            data,
        }
    }
}

/// How one dictionary field maps onto matrix columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldEncoding {
    /// `categories.len()` indicator columns followed by a Missing column.
    OneHot { categories: Vec<String> },
    /// Like `OneHot`, but several categories may be set at once.
    MultiHot { categories: Vec<String> },
    /// Standardized value column followed by a Missing column.
    Numeric { mean: f64, std: f64 },
    /// 0/1 value column followed by a Missing column.
    Boolean,
}

impl FieldEncoding {
    pub fn width(&self) -> usize {
        match self {
            FieldEncoding::OneHot { categories } | FieldEncoding::MultiHot { categories } => categories.len() + 1,
            FieldEncoding::Numeric { .. } | FieldEncoding::Boolean => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldBlock {
    pub key: String,
    pub start: usize,
    pub encoding: FieldEncoding,
}

impl FieldBlock {
    pub fn missing_col(&self) -> usize {
        self.start + self.encoding.width() - 1
    }
}

/// Frozen encoder state: category lists and numeric statistics per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub blocks: Vec<FieldBlock>,
    pub feature_names: Vec<String>,
}

fn is_list_field(records: &[CrashRecord], key: &str) -> bool {
    records
        .first()
        .and_then(|r| r.field(key))
        .is_some_and(|v| matches!(v, FieldValue::Set(_)))
}

impl Encoder {
    /// Fit category lists (closed sets from the dictionary, open sets from the
    /// training records, sorted) and numeric means/standard deviations.
    pub fn fit(records: &[CrashRecord], dict: &FeatureDictionary) -> Encoder {
        let mut blocks = Vec::new();
        let mut names = Vec::new();
        let mut start = 0;
        for spec in dict.fields() {
            let key = spec.key.as_str();
            let values: Vec<FieldValue> = records.iter().map(|r| r.field(key).unwrap_or(FieldValue::Missing)).collect();
            let encoding = match spec.kind {
                FieldKind::Numeric => {
                    let xs: Vec<f64> = values
                        .iter()
                        .filter_map(|v| match v {
                            FieldValue::Numeric(x) => Some(*x),
                            _ => None,
                        })
                        .collect();
                    let n = xs.len().max(1) as f64;
                    let mean = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    FieldEncoding::Numeric { mean, std }
                }
                FieldKind::Boolean => FieldEncoding::Boolean,
                FieldKind::Categorical | FieldKind::Text => {
                    let categories = if spec.allowed.is_empty() {
                        let mut seen: Vec<String> = values
                            .iter()
                            .flat_map(|v| match v {
                                FieldValue::Categorical(s) | FieldValue::Text(s) => vec![s.clone()],
                                FieldValue::Set(items) => items.clone(),
                                _ => vec![],
                            })
                            .collect();
                        seen.sort();
                        seen.dedup();
                        seen
                    } else {
                        spec.allowed.clone()
                    };
                    if is_list_field(records, key) {
                        FieldEncoding::MultiHot { categories }
                    } else {
                        FieldEncoding::OneHot { categories }
                    }
                }
            };
            match &encoding {
                FieldEncoding::OneHot { categories } | FieldEncoding::MultiHot { categories } => {
                    names.extend(categories.iter().map(|c| format!("{key}={c}")));
                }
                FieldEncoding::Numeric { .. } | FieldEncoding::Boolean => names.push(key.to_string()),
            }
            names.push(format!("{key}=<missing>"));
            let width = encoding.width();
            blocks.push(FieldBlock {
                key: key.to_string(),
                start,
                encoding,
            });
            start += width;
        }
        Encoder {
            blocks,
            feature_names: names,
        }
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// Encode one record into `out` (length [`Encoder::width`]).
    pub fn encode_into(&self, record: &CrashRecord, out: &mut [f64]) {
        out.fill(0.0);
        for b in &self.blocks {
            let value = record.field(&b.key).unwrap_or(FieldValue::Missing);
            let miss = b.missing_col();
            match (&b.encoding, value) {
                (FieldEncoding::Numeric { mean, std }, FieldValue::Numeric(x)) => out[b.start] = (x - mean) / std,
                (FieldEncoding::Boolean, FieldValue::Boolean(v)) => out[b.start] = if v { 1.0 } else { 0.0 },
                (FieldEncoding::OneHot { categories }, FieldValue::Categorical(s) | FieldValue::Text(s)) => {
                    match categories.iter().position(|c| *c == s) {
                        Some(k) => out[b.start + k] = 1.0,
                        None => out[miss] = 1.0,
                    }
                }
                (FieldEncoding::MultiHot { categories }, FieldValue::Set(items)) => {
                    for item in items {
                        if let Some(k) = categories.iter().position(|c| *c == item) {
                            out[b.start + k] = 1.0;
                        }
                    }
                }
                _ => out[miss] = 1.0,
            }
        }
    }

    pub fn encode(&self, records: &[CrashRecord], exec: Exec) -> Matrix {
        let rows = exec.map(records, |r| {
            let mut row = vec![0.0; self.width()];
            self.encode_into(r, &mut row);
            row
        });
        let mut m = Matrix::zeros(records.len(), self.width());
        for (i, row) in rows.into_iter().enumerate() {
            m.data[i * m.n_cols..(i + 1) * m.n_cols].copy_from_slice(&row);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub x: Matrix,
    pub feature_names: Vec<String>,
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
    pub encoder: Encoder,
}

/// Fit an encoder on `records` and encode them with labels for `task`.
pub fn encode(records: &[CrashRecord], dict: &FeatureDictionary, task: Task, exec: Exec) -> EncodedDataset {
    let encoder = Encoder::fit(records, dict);
    encode_with(&encoder, records, task, exec)
}

/// Encode with an already-fitted (frozen) encoder.
pub fn encode_with(encoder: &Encoder, records: &[CrashRecord], task: Task, exec: Exec) -> EncodedDataset {
    EncodedDataset {
        x: encoder.encode(records, exec),
        feature_names: encoder.feature_names.clone(),
        y: records.iter().map(|r| task.label_index(&r.labels)).collect(),
        class_names: task.class_names(),
        encoder: encoder.clone(),
    }
}
