//! Record → four-paragraph text, prompt assembly and SFT export.
//!
//! Paragraphs come from a plain-text template file (see
//! `config/templates.txt`). Rendering is deterministic: a record and a
//! template hash fully determine the output bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dictionary::{FeatureDictionary, FieldKind};
use crate::exec::Exec;
use crate::model::{AccidentType, CrashRecord, FieldValue, LabelCodec, Severity, Task, UNIT_KEYS};

pub const DEFAULT_TEMPLATES: &str = include_str!("../config/templates.txt");
pub const TARGET_PREFIX: &str = "The answer is: ";
pub const PARAGRAPH_TITLES: [&str; 4] = [
    "General Information",
    "Infrastructure Information",
    "Event Information",
    "Unit Information",
];
/// Units described individually; the rest are summarized in one sentence.
pub const MAX_DESCRIBED_UNITS: usize = 4;
pub const WORD_BUDGET: (usize, usize) = (60, 160);

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template line {line}: slot {slot:?} is not a feature-dictionary key")]
    UnknownSlot { slot: String, line: usize },
    #[error("template line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("slot {0:?} does not resolve on the record")]
    Unresolved(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot { key: String, format: SlotFormat },
}

#[derive(Debug, Clone, PartialEq)]
enum SlotFormat {
    Plain,
    Decimals(usize),
    Flag { yes: String, no: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Sentence {
    pieces: Vec<Piece>,
}

impl Sentence {
    fn slots(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot { key, .. } => Some(key.as_str()),
            Piece::Text(_) => None,
        })
    }

    fn has_slots(&self) -> bool {
        self.slots().next().is_some()
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub version: String,
    paragraphs: [Vec<Sentence>; 4],
    unit_each: Vec<Sentence>,
    missing: BTreeMap<String, String>,
    values: BTreeMap<(String, String), String>,
    system: BTreeMap<Task, String>,
    hash: String,
}

fn parse_sentence(raw: &str, line: usize) -> Result<Sentence, TemplateError> {
    let syntax = |msg: &str| TemplateError::Syntax {
        line,
        msg: msg.to_string(),
    };
    let mut pieces = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Text(rest[..open].to_string()));
        }
        let close = rest[open..].find('}').ok_or_else(|| syntax("unclosed '{'"))? + open;
        let inner = &rest[open + 1..close];
        let piece = if let Some((key, branches)) = inner.split_once('?') {
            let (yes, no) = branches
                .split_once('|')
                .ok_or_else(|| syntax("flag slot needs `{key?yes|no}`"))?;
            Piece::Slot {
                key: key.trim().to_string(),
                format: SlotFormat::Flag {
                    yes: yes.to_string(),
                    no: no.to_string(),
                },
            }
        } else if let Some((key, spec)) = inner.split_once(':') {
            let digits = spec
                .strip_prefix('.')
                .and_then(|d| d.parse::<usize>().ok())
                .ok_or_else(|| syntax("numeric format must be `:.N`"))?;
            Piece::Slot {
                key: key.trim().to_string(),
                format: SlotFormat::Decimals(digits),
            }
        } else {
            Piece::Slot {
                key: inner.trim().to_string(),
                format: SlotFormat::Plain,
            }
        };
        pieces.push(piece);
        rest = &rest[close + 1..];
    }
    if rest.contains('}') {
        return Err(syntax("stray '}'"));
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest.to_string()));
    }
    Ok(Sentence { pieces })
}

impl TemplateSet {
    pub fn bundled(dict: &FeatureDictionary) -> Result<Self, TemplateError> {
        Self::parse(DEFAULT_TEMPLATES, dict)
    }

    pub fn load(path: &Path, dict: &FeatureDictionary) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?, dict)
    }

    /// Parse and check every slot against the dictionary.
    pub fn parse(text: &str, dict: &FeatureDictionary) -> Result<Self, TemplateError> {
        let mut set = TemplateSet {
            version: String::new(),
            paragraphs: Default::default(),
            unit_each: Vec::new(),
            missing: BTreeMap::new(),
            values: BTreeMap::new(),
            system: BTreeMap::new(),
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        };
        let mut section: Option<String> = None;
        let mut system_lines: BTreeMap<Task, Vec<String>> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let syntax = |msg: String| TemplateError::Syntax { line, msg };
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(name.to_string());
                continue;
            }
            let Some(sec) = section.as_deref() else {
                match content.split_once(' ') {
                    Some(("version", v)) => set.version = v.trim().to_string(),
                    _ => return Err(syntax(format!("unexpected line outside a section: {content:?}"))),
                }
                continue;
            };
            match sec {
                "general" | "infrastructure" | "event" | "unit" | "unit_each" => {
                    let sentence = parse_sentence(content, line)?;
                    for slot in sentence.slots() {
                        let known = dict.field(slot).is_some() && (sec != "unit_each" || UNIT_KEYS.contains(&slot));
                        if !known {
                            return Err(TemplateError::UnknownSlot {
                                slot: slot.to_string(),
                                line,
                            });
                        }
                    }
                    match sec {
                        "general" => set.paragraphs[0].push(sentence),
                        "infrastructure" => set.paragraphs[1].push(sentence),
                        "event" => set.paragraphs[2].push(sentence),
                        "unit" => set.paragraphs[3].push(sentence),
                        _ => set.unit_each.push(sentence),
                    }
                }
                "missing" => {
                    let (key, phrase) = content
                        .split_once('=')
                        .ok_or_else(|| syntax("expected `key = phrase`".into()))?;
                    let key = key.trim();
                    if dict.field(key).is_none() {
                        return Err(TemplateError::UnknownSlot {
                            slot: key.to_string(),
                            line,
                        });
                    }
                    set.missing.insert(key.to_string(), phrase.trim().to_string());
                }
                "values" => {
                    let (lhs, phrase) = content
                        .split_once('=')
                        .ok_or_else(|| syntax("expected `key value = phrase`".into()))?;
                    let parts: Vec<&str> = lhs.split_whitespace().collect();
                    let [key, value] = parts[..] else {
                        return Err(syntax("expected `key value = phrase`".into()));
                    };
                    let spec = dict.field(key).ok_or_else(|| TemplateError::UnknownSlot {
                        slot: key.to_string(),
                        line,
                    })?;
                    if !spec.allowed.is_empty() && !spec.allowed.iter().any(|a| a == value) {
                        return Err(syntax(format!("{value:?} is not a value of {key}")));
                    }
                    set.values
                        .insert((key.to_string(), value.to_string()), phrase.trim().to_string());
                }
                other => {
                    let task = other
                        .strip_prefix("system.")
                        .and_then(|t| t.parse::<Task>().ok())
                        .ok_or_else(|| syntax(format!("unknown section [{other}]")))?;
                    system_lines.entry(task).or_default().push(content.to_string());
                }
            }
        }
        for task in Task::ALL {
            let lines = system_lines.remove(&task).ok_or_else(|| TemplateError::Syntax {
                line: 0,
                msg: format!("missing [system.{task}] section"),
            })?;
            let labels = task.tokens().join(", ");
            set.system.insert(task, lines.join(" ").replace("{labels}", &labels));
        }
        Ok(set)
    }

    /// SHA-256 of the template source, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn system_prompt(&self, task: Task) -> &str {
        &self.system[&task]
    }

    fn missing_phrase(&self, key: &str) -> String {
        self.missing
            .get(key)
            .cloned()
            .unwrap_or_else(|| format!("the {} was not recorded", key.trim_start_matches("fact.").replace('_', " ")))
    }

    fn value_phrase(&self, key: &str, value: &str) -> String {
        self.values
            .get(&(key.to_string(), value.to_string()))
            .cloned()
            .unwrap_or_else(|| value.replace('_', " "))
    }
}

fn fmt_number(v: f64, decimals: Option<usize>) -> String {
    match decimals {
        Some(d) => format!("{v:.d$}"),
        None if v.fract() == 0.0 && v.abs() < 1e15 => format!("{}", v as i64),
        None => format!("{v}"),
    }
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => "none cited".to_string(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

enum Rendered {
    Framing(String),
    Filled(String),
    Hedged(Vec<String>),
}

fn sentence_case(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn render_sentence(
    sentence: &Sentence,
    templates: &TemplateSet,
    dict: &FeatureDictionary,
    lookup: &dyn Fn(&str) -> Option<FieldValue>,
) -> Result<Rendered, TemplateError> {
    if !sentence.has_slots() {
        let text: String = sentence
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Text(t) => t.as_str(),
                Piece::Slot { .. } => "",
            })
            .collect();
        return Ok(Rendered::Framing(text));
    }
    let mut out = String::new();
    let mut missing = Vec::new();
    for piece in &sentence.pieces {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot { key, format } => {
                let value = lookup(key).ok_or_else(|| TemplateError::Unresolved(key.clone()))?;
                let text = match (value, format) {
                    (FieldValue::Missing, _) => {
                        missing.push(templates.missing_phrase(key));
                        continue;
                    }
                    (FieldValue::Boolean(b), SlotFormat::Flag { yes, no }) => if b { yes } else { no }.clone(),
                    (FieldValue::Boolean(b), _) => if b { "yes" } else { "no" }.to_string(),
                    (FieldValue::Numeric(v), SlotFormat::Decimals(d)) => fmt_number(v, Some(*d)),
                    (FieldValue::Numeric(v), _) => fmt_number(v, None),
                    (FieldValue::Categorical(v) | FieldValue::Text(v), _) => templates.value_phrase(key, &v),
                    (FieldValue::Set(items), _) => {
                        let phrases: Vec<String> = items.iter().map(|v| templates.value_phrase(key, v)).collect();
                        join_list(&phrases)
                    }
                };
                out.push_str(&text);
            }
        }
    }
    debug_assert!(sentence.slots().all(|k| dict.field(k).is_some()));
    if missing.is_empty() {
        Ok(Rendered::Filled(sentence_case(&out)))
    } else {
        Ok(Rendered::Hedged(missing))
    }
}

/// Render one paragraph body from its sentences. Hedged clauses are deduplicated;
/// framing sentences are dropped when nothing in the paragraph was filled.
fn render_body(
    sentences: &[Sentence],
    templates: &TemplateSet,
    dict: &FeatureDictionary,
    lookup: &dyn Fn(&str) -> Option<FieldValue>,
) -> Result<(Vec<String>, bool), TemplateError> {
    let mut rendered = Vec::with_capacity(sentences.len());
    for s in sentences {
        rendered.push(render_sentence(s, templates, dict, lookup)?);
    }
    let any_filled = rendered.iter().any(|r| matches!(r, Rendered::Filled(_)));
    let mut seen: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for r in rendered {
        match r {
            Rendered::Framing(t) if any_filled => out.push(t),
            Rendered::Framing(_) => {}
            Rendered::Filled(t) => out.push(t),
            Rendered::Hedged(phrases) => {
                for p in phrases {
                    if !seen.contains(&p) {
                        out.push(format!("{}.", sentence_case(&p)));
                        seen.push(p);
                    }
                }
            }
        }
    }
    Ok((out, any_filled))
}

/// The four paragraph bodies (without titles), in fixed order.
pub fn render_paragraphs(record: &CrashRecord, templates: &TemplateSet, dict: &FeatureDictionary) -> Result<[String; 4], TemplateError> {
    let lookup = |key: &str| record.field(key);
    let mut paragraphs: [String; 4] = Default::default();
    for (i, sentences) in templates.paragraphs.iter().enumerate() {
        let (mut parts, _) = render_body(sentences, templates, dict, &lookup)?;
        if i == 3 {
            for (n, unit) in record.units.iter().take(MAX_DESCRIBED_UNITS).enumerate() {
                let unit_lookup = |key: &str| unit.field(key);
                let (unit_parts, _) = render_body(&templates.unit_each, templates, dict, &unit_lookup)?;
                if let Some(first) = unit_parts.first() {
                    parts.push(format!("Unit {}: {first}", n + 1));
                    parts.extend(unit_parts.into_iter().skip(1));
                }
            }
            let rest = record.units.len().saturating_sub(MAX_DESCRIBED_UNITS);
            if rest > 0 {
                parts.push(format!("A further {rest} units are not described individually."));
            }
        }
        paragraphs[i] = parts.join(" ");
    }
    Ok(paragraphs)
}

pub fn assemble_user_text(paragraphs: &[String; 4]) -> String {
    PARAGRAPH_TITLES
        .iter()
        .zip(paragraphs)
        .map(|(title, body)| format!("{title}: {body}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Split a user text back into its four paragraph bodies.
pub fn split_user_text(user_text: &str) -> Option<[&str; 4]> {
    let blocks: Vec<&str> = user_text.split("\n\n").collect();
    if blocks.len() != 4 {
        return None;
    }
    let mut out = [""; 4];
    for (i, (block, title)) in blocks.iter().zip(PARAGRAPH_TITLES).enumerate() {
        out[i] = block.strip_prefix(title)?.strip_prefix(": ")?;
    }
    Some(out)
}

pub fn target_text(record: &CrashRecord, task: Task) -> String {
    format!("{TARGET_PREFIX}{}", task.token_of(&record.labels))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub case_id: String,
    pub task: Task,
    pub system_text: String,
    pub user_text: String,
    pub target_text: String,
}

pub fn build_prompt(record: &CrashRecord, task: Task, templates: &TemplateSet, dict: &FeatureDictionary) -> Result<PromptBundle, TemplateError> {
    let paragraphs = render_paragraphs(record, templates, dict)?;
    Ok(PromptBundle {
        case_id: record.case_id.clone(),
        task,
        system_text: templates.system_prompt(task).to_string(),
        user_text: assemble_user_text(&paragraphs),
        target_text: target_text(record, task),
    })
}

/// Prompts for many records, in input order.
pub fn build_prompts(
    records: &[CrashRecord],
    task: Task,
    templates: &TemplateSet,
    dict: &FeatureDictionary,
    exec: Exec,
) -> Result<Vec<PromptBundle>, TemplateError> {
    exec.map(records, |r| build_prompt(r, task, templates, dict))
        .into_iter()
        .collect()
}

/// One line of an SFT training file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub case_id: String,
    pub system: String,
    pub user: String,
    pub assistant: String,
}

impl From<PromptBundle> for SftExample {
    fn from(b: PromptBundle) -> Self {
        SftExample {
            case_id: b.case_id,
            system: b.system_text,
            user: b.user_text,
            assistant: b.target_text,
        }
    }
}

/// Write one JSON line per record, ordered by case id. Returns the count.
pub fn export_sft(
    records: &[CrashRecord],
    task: Task,
    templates: &TemplateSet,
    dict: &FeatureDictionary,
    path: &Path,
    exec: Exec,
) -> Result<usize, TemplateError> {
    let mut bundles = build_prompts(records, task, templates, dict, exec)?;
    bundles.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut out = BufWriter::new(File::create(path)?);
    for b in &bundles {
        let line = serde_json::to_string(&SftExample::from(b.clone())).map_err(std::io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(bundles.len())
}

pub fn read_sft(path: &Path) -> Result<Vec<SftExample>, TemplateError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| TemplateError::Io(std::io::Error::other(e))))
        .collect()
}

/// Phrases that would reveal a label if they appeared in model input.
pub fn leakage_phrases() -> Vec<String> {
    let mut phrases: Vec<String> = Task::ALL
        .iter()
        .flat_map(|t| t.tokens())
        .map(str::to_lowercase)
        .collect();
    phrases.extend(Severity::all().iter().map(|s| s.name().to_lowercase()));
    phrases.extend(
        AccidentType::all()
            .iter()
            .filter(|a| **a != AccidentType::Other)
            .flat_map(|a| {
                let n = a.name().to_lowercase();
                [n.clone(), n.replace('_', " ")]
            }),
    );
    phrases.sort();
    phrases.dedup();
    phrases
}

/// Label tokens or label names found in `text` (case-insensitive).
pub fn scan_leakage(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    leakage_phrases().into_iter().filter(|p| lower.contains(p.as_str())).collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Paragraphs outside the soft word budget, as `(case_id, paragraph index, words)`.
pub fn word_budget_outliers(bundles: &[PromptBundle]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for b in bundles {
        if let Some(paras) = split_user_text(&b.user_text) {
            for (i, p) in paras.iter().enumerate() {
                let n = word_count(p);
                if n < WORD_BUDGET.0 || n > WORD_BUDGET.1 {
                    out.push((b.case_id.clone(), i, n));
                }
            }
        }
    }
    out
}

/// Keys a paragraph template references, for diagnostics.
pub fn paragraph_slots(templates: &TemplateSet, paragraph: usize) -> Vec<String> {
    let mut keys: Vec<String> = templates.paragraphs[paragraph]
        .iter()
        .flat_map(|s| s.slots().map(str::to_string).collect::<Vec<_>>())
        .collect();
    if paragraph == 3 {
        keys.extend(templates.unit_each.iter().flat_map(|s| s.slots().map(str::to_string).collect::<Vec<_>>()));
    }
    keys
}

/// Dictionary fields that no paragraph mentions.
pub fn unreferenced_fields(templates: &TemplateSet, dict: &FeatureDictionary) -> Vec<String> {
    let used: Vec<String> = (0..4).flat_map(|p| paragraph_slots(templates, p)).collect();
    dict.fields()
        .iter()
        .filter(|f| f.kind != FieldKind::Text && !used.contains(&f.key))
        .map(|f| f.key.clone())
        .collect()
}
