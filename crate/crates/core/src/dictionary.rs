//! The versioned feature dictionary.
//!
//! A small line-oriented config naming every record attribute the pipeline
//! reads, its kind, the closed category set (if any), value and column
//! aliases, and the source table schemas. Ingest, the encoder, the
//! completeness filter and the templates all read field lists from here.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::is_record_key;

pub const DEFAULT_DICTIONARY: &str = include_str!("../config/features.dict");

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("dictionary line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("dictionary line {line}: unknown record key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("reading dictionary: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Categorical,
    Numeric,
    Boolean,
    Text,
}

impl FromStr for FieldKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "categorical" => Ok(FieldKind::Categorical),
            "numeric" => Ok(FieldKind::Numeric),
            "boolean" => Ok(FieldKind::Boolean),
            "text" => Ok(FieldKind::Text),
            other => Err(format!("unknown field kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub key: String,
    pub kind: FieldKind,
    /// Closed category set; empty means open (any normalized value accepted).
    pub allowed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableSchema {
    pub name: String,
    pub required: Vec<String>,
    pub optional: Vec<String>,
}

impl TableSchema {
    pub fn contains(&self, column: &str) -> bool {
        self.required.iter().chain(&self.optional).any(|c| c == column)
    }
}

/// Extra field rewrite a what-if factor applies on top of its primary flip.
#[derive(Debug, Clone, PartialEq)]
pub struct DependentRewrite {
    pub factor: String,
    pub key: String,
    pub value: String,
}

/// Outcome of normalizing one raw categorical value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalized {
    Value(String),
    Missing,
    Unknown(String),
}

#[derive(Debug, Clone)]
pub struct FeatureDictionary {
    pub version: String,
    fields: Vec<FieldSpec>,
    value_aliases: HashMap<String, HashMap<String, String>>,
    column_aliases: HashMap<String, String>,
    tables: BTreeMap<String, TableSchema>,
    dependents: Vec<DependentRewrite>,
    missing_tokens: Vec<String>,
    hash: String,
}

impl Default for FeatureDictionary {
    fn default() -> Self {
        FeatureDictionary::parse(DEFAULT_DICTIONARY).expect("bundled dictionary parses")
    }
}

/// Case-fold, trim and join internal whitespace/hyphens with underscores.
pub fn normalize_token(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .collect()
}

impl FeatureDictionary {
    pub fn load(path: &Path) -> Result<Self, DictionaryError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, DictionaryError> {
        let mut dict = FeatureDictionary {
            version: String::new(),
            fields: Vec::new(),
            value_aliases: HashMap::new(),
            column_aliases: HashMap::new(),
            tables: BTreeMap::new(),
            dependents: Vec::new(),
            missing_tokens: Vec::new(),
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |msg: &str| DictionaryError::Syntax {
                line,
                msg: msg.to_string(),
            };
            let parts: Vec<&str> = content.split_whitespace().collect();
            match parts[0] {
                "version" => {
                    dict.version = parts.get(1).ok_or_else(|| syntax("version needs a value"))?.to_string();
                }
                "missing" => {
                    let list = parts.get(1).ok_or_else(|| syntax("missing needs a token list"))?;
                    dict.missing_tokens.extend(split_list(list).iter().map(|t| normalize_token(t)));
                }
                "field" => {
                    if parts.len() < 3 || parts.len() > 4 {
                        return Err(syntax("expected: field <key> <kind> [values]"));
                    }
                    let key = parts[1];
                    if !is_record_key(key) {
                        return Err(DictionaryError::UnknownKey {
                            line,
                            key: key.to_string(),
                        });
                    }
                    if dict.fields.iter().any(|f| f.key == key) {
                        return Err(syntax("duplicate field"));
                    }
                    let kind = parts[2].parse::<FieldKind>().map_err(|m| syntax(&m))?;
                    let allowed = parts.get(3).map(|v| split_list(v)).unwrap_or_default();
                    if !allowed.is_empty() && kind != FieldKind::Categorical {
                        return Err(syntax("only categorical fields take a value list"));
                    }
                    dict.fields.push(FieldSpec {
                        key: key.to_string(),
                        kind,
                        allowed,
                    });
                }
                "value" => {
                    if parts.len() != 4 {
                        return Err(syntax("expected: value <key> <raw> <canonical>"));
                    }
                    dict.value_aliases
                        .entry(parts[1].to_string())
                        .or_default()
                        .insert(normalize_token(parts[2]), parts[3].to_string());
                }
                "alias" => {
                    if parts.len() != 3 {
                        return Err(syntax("expected: alias <column> <canonical>"));
                    }
                    dict.column_aliases.insert(parts[1].to_string(), parts[2].to_string());
                }
                "table" => {
                    if parts.len() != 3 {
                        return Err(syntax("expected: table <name> <columns>"));
                    }
                    let mut required = Vec::new();
                    let mut optional = Vec::new();
                    for col in split_list(parts[2]) {
                        match col.strip_suffix('?') {
                            Some(c) => optional.push(c.to_string()),
                            None => required.push(col),
                        }
                    }
                    dict.tables.insert(
                        parts[1].to_string(),
                        TableSchema {
                            name: parts[1].to_string(),
                            required,
                            optional,
                        },
                    );
                }
                "depends" => {
                    let (key, value) = parts
                        .get(2)
                        .and_then(|kv| kv.split_once('='))
                        .filter(|_| parts.len() == 3)
                        .ok_or_else(|| syntax("expected: depends <factor> <key>=<value>"))?;
                    if !is_record_key(key) {
                        return Err(DictionaryError::UnknownKey {
                            line,
                            key: key.to_string(),
                        });
                    }
                    dict.dependents.push(DependentRewrite {
                        factor: parts[1].to_string(),
                        key: key.to_string(),
                        value: value.to_string(),
                    });
                }
                other => return Err(syntax(&format!("unknown directive {other:?}"))),
            }
        }
        for (key, aliases) in &dict.value_aliases {
            let Some(spec) = dict.field(key) else {
                return Err(DictionaryError::UnknownKey {
                    line: 0,
                    key: key.clone(),
                });
            };
            if !spec.allowed.is_empty() {
                if let Some(bad) = aliases.values().find(|v| !spec.allowed.contains(v)) {
                    return Err(DictionaryError::Syntax {
                        line: 0,
                        msg: format!("alias target {bad:?} is not an allowed value of {key}"),
                    });
                }
            }
        }
        Ok(dict)
    }

    /// SHA-256 of the dictionary source text, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn field(&self, key: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.key == key)
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.get(name)
    }

    pub fn dependents<'a>(&'a self, factor: &'a str) -> impl Iterator<Item = &'a DependentRewrite> + 'a {
        self.dependents.iter().filter(move |d| d.factor == factor)
    }

    /// Canonical name of a source column.
    pub fn canonical_column<'a>(&'a self, column: &'a str) -> &'a str {
        self.column_aliases.get(column).map(String::as_str).unwrap_or(column)
    }

    pub fn is_missing_token(&self, raw: &str) -> bool {
        let n = normalize_token(raw);
        n.is_empty() || self.missing_tokens.contains(&n)
    }

    /// Normalize a raw categorical value for `key`: trim, case-fold, alias-map,
    /// then check against the closed set.
    pub fn normalize(&self, key: &str, raw: &str) -> Normalized {
        if self.is_missing_token(raw) {
            return Normalized::Missing;
        }
        let n = normalize_token(raw);
        let mapped = self
            .value_aliases
            .get(key)
            .and_then(|m| m.get(&n))
            .cloned()
            .unwrap_or(n);
        match self.field(key) {
            Some(spec) if !spec.allowed.is_empty() && !spec.allowed.contains(&mapped) => {
                Normalized::Unknown(mapped)
            }
            _ => Normalized::Value(mapped),
        }
    }
}
