//! Source-table parsing, joining into [`CrashRecord`]s, categorical cleaning
//! and the completeness filter.
//!
//! Four delimiter-separated tables feed a record: crashes (one row per report,
//! carries the labels), road segments (keyed by route and a half-open
//! milepost interval), units (vehicles, pedestrians, cyclists) and optionally
//! persons (driver age and gender per unit). Column names pass through the
//! dictionary's alias map before the schema check.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dictionary::{FeatureDictionary, FieldKind, Normalized};
use crate::exec::Exec;
use crate::model::{
    accident_type_from_id, severity_from_ordinal, AccidentType, CrashRecord, EventInfo, FieldValue, GeneralInfo,
    InfrastructureInfo, LabelCodec, Labels, NarrativeFact, Severity, UnitInfo, UnitKind,
};

pub const DEFAULT_MIN_COMPLETENESS: f64 = 0.6;
pub const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
const DATETIME_FORMATS: &[&str] = &["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M"];
/// Separator for list-valued cells such as contributing factors.
pub const LIST_SEPARATOR: char = ';';

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("table {table}: header does not match schema: {detail}")]
    SchemaMismatch { table: String, detail: String },
    #[error("table {table}: parse error at line {line}: {msg}")]
    ParseError { table: String, line: u64, msg: String },
    #[error("no schema named {0:?} in the feature dictionary")]
    UnknownSchema(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Row = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    /// Canonical column names in header order.
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
    pub malformed: Vec<MalformedLine>,
}

pub fn parse_table(path: &Path, schema_name: &str, dict: &FeatureDictionary, delimiter: u8) -> Result<Table, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_table_from(file, schema_name, dict, delimiter)
}

/// Parse a header-led delimited table. Rows with the wrong number of cells
/// are collected in [`Table::malformed`] instead of being dropped silently.
pub fn parse_table_from<R: Read>(reader: R, schema_name: &str, dict: &FeatureDictionary, delimiter: u8) -> Result<Table, IngestError> {
    let schema = dict
        .table(schema_name)
        .ok_or_else(|| IngestError::UnknownSchema(schema_name.to_string()))?;
    let mismatch = |detail: String| IngestError::SchemaMismatch {
        table: schema_name.to_string(),
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| IngestError::ParseError {
        table: schema_name.to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    let mut columns: Vec<String> = Vec::with_capacity(headers.len());
    for raw in headers {
        let col = dict.canonical_column(raw.trim()).to_string();
        if !schema.contains(&col) {
            return Err(mismatch(format!("unexpected column {raw:?}")));
        }
        if columns.contains(&col) {
            return Err(mismatch(format!("column {col:?} appears twice (after aliasing)")));
        }
        columns.push(col);
    }
    if let Some(missing) = schema.required.iter().find(|c| !columns.contains(c)) {
        return Err(mismatch(format!("missing column {missing:?}")));
    }

    let mut rows = Vec::new();
    let mut malformed = Vec::new();
    for result in rdr.records() {
        let record = result.map_err(|e| IngestError::ParseError {
            table: schema_name.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != columns.len() {
            malformed.push(MalformedLine {
                line,
                reason: format!("expected {} cells, found {}", columns.len(), record.len()),
            });
            continue;
        }
        rows.push(columns.iter().cloned().zip(record.iter().map(str::to_string)).collect());
    }
    Ok(Table {
        name: schema_name.to_string(),
        columns,
        rows,
        malformed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceBundle {
    pub crash_table: PathBuf,
    pub road_table: PathBuf,
    pub unit_table: PathBuf,
    pub person_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingLabels,
    MissingJoin,
    BelowCompleteness,
    DuplicateCaseId,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AliasConflict {
    pub case_id: String,
    pub column: String,
    pub kept: String,
    pub discarded: String,
    pub discarded_from: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnknownCategory {
    pub case_id: String,
    pub key: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: BTreeMap<String, usize>,
    pub malformed_lines: BTreeMap<String, Vec<MalformedLine>>,
    /// Crash rows that parsed; every one ends up built or dropped.
    pub joinable_crash_rows: usize,
    pub records_built: usize,
    pub records_dropped: usize,
    pub dropped_by_reason: BTreeMap<DropReason, usize>,
    /// Records kept without a matching road segment (infrastructure Missing).
    pub unmatched_road: Vec<String>,
    pub conflicts: Vec<AliasConflict>,
    pub unknown_categories: Vec<UnknownCategory>,
    pub invalid_values: usize,
}

impl IngestReport {
    fn drop(&mut self, reason: DropReason, n: usize) {
        if n > 0 {
            *self.dropped_by_reason.entry(reason).or_default() += n;
            self.records_dropped += n;
            self.records_built -= n.min(self.records_built);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub delimiter: u8,
    pub min_completeness: f64,
    pub exec: Exec,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: b',',
            min_completeness: DEFAULT_MIN_COMPLETENESS,
            exec: Exec::default(),
        }
    }
}

/// Route segment used for milepost containment, `[begin_mp, end_mp)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub route_id: String,
    pub begin_mp: f64,
    pub end_mp: f64,
    pub road_type: Option<String>,
    pub lane_count: Option<u32>,
    pub speed_limit: Option<u32>,
}

struct RoadIndex<'a> {
    by_route: HashMap<&'a str, Vec<(f64, f64, &'a Row)>>,
}

impl<'a> RoadIndex<'a> {
    fn build(table: &'a Table, report: &mut IngestReport) -> Self {
        let mut by_route: HashMap<&str, Vec<(f64, f64, &Row)>> = HashMap::new();
        for row in &table.rows {
            let (Some(begin), Some(end)) = (parse_f64(&row["begin_mp"]), parse_f64(&row["end_mp"])) else {
                report.invalid_values += 1;
                continue;
            };
            by_route.entry(row["route_id"].trim()).or_default().push((begin, end, row));
        }
        for segs in by_route.values_mut() {
            segs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        }
        RoadIndex { by_route }
    }

    /// Segment containing the milepost; the latest-starting one if several overlap.
    fn find(&self, route: &str, milepost: f64) -> Option<&'a Row> {
        let segs = self.by_route.get(route.trim())?;
        let upto = segs.partition_point(|s| s.0 <= milepost);
        segs[..upto].iter().rev().find(|s| milepost < s.1).map(|s| s.2)
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_u32(s: &str) -> Option<u32> {
    let t = s.trim();
    t.parse::<u32>()
        .ok()
        .or_else(|| t.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= u32::MAX as f64).map(|v| v as u32))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "true" | "t" | "1" => Some(true),
        "n" | "no" | "false" | "f" | "0" => Some(false),
        _ => None,
    }
}

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let t = s.trim();
    DATETIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(t, f).ok())
}

pub fn parse_severity(s: &str) -> Option<Severity> {
    let t = s.trim();
    if let Ok(n) = t.parse::<i64>() {
        return severity_from_ordinal(n).ok();
    }
    let mut chars = t.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        return Severity::from_code(c.to_ascii_uppercase());
    }
    Severity::all()
        .iter()
        .copied()
        .find(|sev| sev.token() == t || sev.name().eq_ignore_ascii_case(t))
}

pub fn parse_accident_type(s: &str) -> Option<AccidentType> {
    let t = s.trim();
    if let Ok(n) = t.parse::<i64>() {
        return accident_type_from_id(n).ok();
    }
    AccidentType::all()
        .iter()
        .copied()
        .find(|a| a.abbr().eq_ignore_ascii_case(t) || a.token() == t || a.name().eq_ignore_ascii_case(t))
}

/// Raw cell accessor that yields `None` for missing tokens.
struct Cells<'r> {
    row: &'r Row,
    dict: &'r FeatureDictionary,
    invalid: usize,
}

impl<'r> Cells<'r> {
    fn raw(&self, col: &str) -> Option<&'r str> {
        self.row
            .get(col)
            .map(String::as_str)
            .filter(|v| !self.dict.is_missing_token(v))
    }

    fn text(&self, col: &str) -> Option<String> {
        self.raw(col).map(str::to_string)
    }

    fn parsed<T>(&mut self, col: &str, parse: impl Fn(&str) -> Option<T>) -> Option<T> {
        let raw = self.raw(col)?;
        let v = parse(raw);
        if v.is_none() {
            self.invalid += 1;
        }
        v
    }
}

struct BuiltRow {
    record: Option<CrashRecord>,
    drop: Option<DropReason>,
    unmatched_road: bool,
    conflicts: Vec<AliasConflict>,
    invalid_values: usize,
}

fn build_record(
    crash: &Row,
    roads: &RoadIndex<'_>,
    units: &HashMap<&str, Vec<&Row>>,
    persons: Option<&HashMap<(&str, &str), &Row>>,
    dict: &FeatureDictionary,
) -> BuiltRow {
    let case_id = crash.get("report_no").map(|s| s.trim().to_string()).unwrap_or_default();
    let mut out = BuiltRow {
        record: None,
        drop: None,
        unmatched_road: false,
        conflicts: Vec::new(),
        invalid_values: 0,
    };

    let mut cells = Cells {
        row: crash,
        dict,
        invalid: 0,
    };
    let labels = (|| {
        Some(Labels {
            injured_count: cells.parsed("injured_count", parse_u32)?,
            severity: cells.parsed("severity", parse_severity)?,
            accident_type: cells.parsed("accident_type", parse_accident_type)?,
        })
    })();
    let Some(labels) = labels.filter(|_| !case_id.is_empty()) else {
        out.drop = Some(DropReason::MissingLabels);
        out.invalid_values = cells.invalid;
        return out;
    };

    let unit_rows = units.get(case_id.as_str()).cloned().unwrap_or_default();
    let mut unit_infos = Vec::new();
    for u in unit_rows {
        let mut uc = Cells {
            row: u,
            dict,
            invalid: 0,
        };
        let Some(kind) = uc.parsed("unit_kind", UnitKind::parse) else {
            out.invalid_values += 1;
            continue;
        };
        let person = persons.and_then(|p| p.get(&(case_id.as_str(), u["unit_no"].trim())));
        let (driver_age, driver_gender) = match person {
            Some(p) => {
                let mut pc = Cells {
                    row: p,
                    dict,
                    invalid: 0,
                };
                let age = pc.parsed("age", parse_u32);
                let gender = pc.text("gender");
                out.invalid_values += pc.invalid;
                (age, gender)
            }
            None => (None, None),
        };
        unit_infos.push(UnitInfo {
            unit_kind: kind,
            vehicle_type: uc.text("vehicle_type"),
            driver_age,
            driver_gender,
            action: uc.text("action"),
        });
        out.invalid_values += uc.invalid;
    }
    if unit_infos.is_empty() {
        out.drop = Some(DropReason::MissingJoin);
        out.invalid_values += cells.invalid;
        return out;
    }

    // Road attributes attach by route + milepost; crash-table values win on overlap.
    let milepost = cells.parsed("milepost", parse_f64);
    let route = cells.text("route_id");
    let road = match (&route, milepost) {
        (Some(r), Some(mp)) => roads.find(r, mp),
        _ => None,
    };
    out.unmatched_road = road.is_none();
    let mut merged: Row = crash.clone();
    if let Some(road) = road {
        for (col, value) in road {
            if matches!(col.as_str(), "route_id" | "begin_mp" | "end_mp") {
                continue;
            }
            let road_present = !dict.is_missing_token(value);
            match crash.get(col).filter(|v| !dict.is_missing_token(v)) {
                Some(kept) => {
                    if road_present && kept.trim() != value.trim() {
                        out.conflicts.push(AliasConflict {
                            case_id: case_id.clone(),
                            column: col.clone(),
                            kept: kept.clone(),
                            discarded: value.clone(),
                            discarded_from: "road".to_string(),
                        });
                    }
                }
                None => {
                    merged.insert(col.clone(), value.clone());
                }
            }
        }
    }

    let mut c = Cells {
        row: &merged,
        dict,
        invalid: 0,
    };
    let narrative_facts = dict
        .fields()
        .iter()
        .filter_map(|f| f.key.strip_prefix("fact."))
        .filter(|factor| merged.contains_key(*factor))
        .map(|factor| NarrativeFact {
            factor: factor.to_string(),
            value: c.text(factor),
        })
        .collect();
    let contributing_factors = c
        .raw("contributing_factors")
        .map(|s| {
            s.split(LIST_SEPARATOR)
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    let record = CrashRecord {
        case_id,
        general: GeneralInfo {
            crash_datetime: c.parsed("crash_datetime", parse_datetime),
            city: c.text("city"),
            route_id: route,
            milepost,
            road_type: c.text("road_type"),
            state_plane_easting: c.parsed("easting", parse_f64),
            state_plane_northing: c.parsed("northing", parse_f64),
        },
        infrastructure: InfrastructureInfo {
            lane_count: c.parsed("lane_count", parse_u32).filter(|&n| n > 0),
            speed_limit: c.parsed("speed_limit", parse_u32),
            work_zone: c.parsed("work_zone", parse_bool),
            lighting: c.text("lighting"),
            road_surface: c.text("road_surface"),
            intersection_related: c.parsed("intersection_related", parse_bool),
        },
        event: EventInfo {
            narrative_facts,
            alcohol_involved: c.parsed("alcohol_involved", parse_bool),
            drug_involved: c.parsed("drug_involved", parse_bool),
            contributing_factors,
        },
        units: unit_infos,
        labels,
    };
    out.invalid_values += c.invalid + cells.invalid;
    out.record = Some(record);
    out
}

/// Join parsed tables into records. Drops are counted, never fatal.
/// Output is ordered by case id, so input row order does not matter.
pub fn join_tables(
    crash: &Table,
    road: &Table,
    unit: &Table,
    person: Option<&Table>,
    dict: &FeatureDictionary,
    exec: Exec,
) -> (Vec<CrashRecord>, IngestReport) {
    let mut report = IngestReport::default();
    for t in [Some(crash), Some(road), Some(unit), person].into_iter().flatten() {
        report.rows_read.insert(t.name.clone(), t.rows.len());
        if !t.malformed.is_empty() {
            report.malformed_lines.insert(t.name.clone(), t.malformed.clone());
        }
    }
    let roads = RoadIndex::build(road, &mut report);
    let mut units: HashMap<&str, Vec<&Row>> = HashMap::new();
    for row in &unit.rows {
        units.entry(row["report_no"].trim()).or_default().push(row);
    }
    for list in units.values_mut() {
        list.sort_by(|a, b| {
            let key = |r: &Row| (parse_u32(&r["unit_no"]).unwrap_or(u32::MAX), r["unit_no"].clone());
            key(a).cmp(&key(b))
        });
    }
    let persons: Option<HashMap<(&str, &str), &Row>> = person.map(|p| {
        p.rows
            .iter()
            .map(|r| ((r["report_no"].trim(), r["unit_no"].trim()), r))
            .collect()
    });

    let built = exec.map(&crash.rows, |row| build_record(row, &roads, &units, persons.as_ref(), dict));

    report.joinable_crash_rows = crash.rows.len();
    let mut records: Vec<CrashRecord> = Vec::new();
    for b in built {
        report.invalid_values += b.invalid_values;
        report.conflicts.extend(b.conflicts);
        match (b.record, b.drop) {
            (Some(r), _) => {
                if b.unmatched_road {
                    report.unmatched_road.push(r.case_id.clone());
                }
                records.push(r);
            }
            (None, Some(reason)) => {
                *report.dropped_by_reason.entry(reason).or_default() += 1;
                report.records_dropped += 1;
            }
            (None, None) => unreachable!("a row is either built or dropped"),
        }
    }
    records.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    // Duplicate report numbers: keep the first in case-id order.
    let before = records.len();
    records.dedup_by(|b, a| a.case_id == b.case_id);
    let dups = before - records.len();
    if dups > 0 {
        *report.dropped_by_reason.entry(DropReason::DuplicateCaseId).or_default() += dups;
        report.records_dropped += dups;
        report.unmatched_road.dedup();
    }
    report.records_built = records.len();
    report.unmatched_road.sort();
    report.conflicts.sort();
    (records, report)
}

pub fn join_records(bundle: &SourceBundle, dict: &FeatureDictionary, opts: &IngestOptions) -> Result<(Vec<CrashRecord>, IngestReport), IngestError> {
    let crash = parse_table(&bundle.crash_table, "crash", dict, opts.delimiter)?;
    let road = parse_table(&bundle.road_table, "road", dict, opts.delimiter)?;
    let unit = parse_table(&bundle.unit_table, "unit", dict, opts.delimiter)?;
    let person = bundle
        .person_table
        .as_ref()
        .map(|p| parse_table(p, "person", dict, opts.delimiter))
        .transpose()?;
    Ok(join_tables(&crash, &road, &unit, person.as_ref(), dict, opts.exec))
}

fn clean_value(dict: &FeatureDictionary, key: &str, slot: &mut Option<String>, case_id: &str, unknown: &mut Vec<UnknownCategory>) {
    let Some(raw) = slot.as_deref() else { return };
    *slot = match dict.normalize(key, raw) {
        Normalized::Value(v) => Some(v),
        Normalized::Missing => None,
        Normalized::Unknown(v) => {
            unknown.push(UnknownCategory {
                case_id: case_id.to_string(),
                key: key.to_string(),
                value: v,
            });
            None
        }
    };
}

/// Normalize every categorical value (trim, case-fold, alias-map) and clear
/// values outside a closed category set. Idempotent.
pub fn clean_record(mut r: CrashRecord, dict: &FeatureDictionary) -> (CrashRecord, Vec<UnknownCategory>) {
    let mut unknown = Vec::new();
    let id = r.case_id.clone();
    let g = &mut r.general;
    clean_value(dict, "city", &mut g.city, &id, &mut unknown);
    clean_value(dict, "route_id", &mut g.route_id, &id, &mut unknown);
    clean_value(dict, "road_type", &mut g.road_type, &id, &mut unknown);
    let i = &mut r.infrastructure;
    clean_value(dict, "lighting", &mut i.lighting, &id, &mut unknown);
    clean_value(dict, "road_surface", &mut i.road_surface, &id, &mut unknown);
    for fact in &mut r.event.narrative_facts {
        let key = format!("fact.{}", fact.factor);
        clean_value(dict, &key, &mut fact.value, &id, &mut unknown);
    }
    let mut factors: Vec<String> = Vec::new();
    for raw in std::mem::take(&mut r.event.contributing_factors) {
        let mut slot = Some(raw);
        clean_value(dict, "contributing_factors", &mut slot, &id, &mut unknown);
        if let Some(v) = slot {
            if !factors.contains(&v) {
                factors.push(v);
            }
        }
    }
    r.event.contributing_factors = factors;
    for u in &mut r.units {
        clean_value(dict, "vehicle_type", &mut u.vehicle_type, &id, &mut unknown);
        clean_value(dict, "driver_gender", &mut u.driver_gender, &id, &mut unknown);
        clean_value(dict, "unit_action", &mut u.action, &id, &mut unknown);
    }
    (r, unknown)
}

pub fn clean_features(records: Vec<CrashRecord>, dict: &FeatureDictionary) -> (Vec<CrashRecord>, Vec<UnknownCategory>) {
    let mut unknown = Vec::new();
    let cleaned = records
        .into_iter()
        .map(|r| {
            let (r, u) = clean_record(r, dict);
            unknown.extend(u);
            r
        })
        .collect();
    (cleaned, unknown)
}

/// Fraction of dictionary fields that are present on the record.
pub fn completeness(record: &CrashRecord, dict: &FeatureDictionary) -> f64 {
    let fields = dict.fields();
    if fields.is_empty() {
        return 1.0;
    }
    let present = fields
        .iter()
        .filter(|f| record.field(&f.key).is_some_and(|v| !v.is_missing()))
        .count();
    present as f64 / fields.len() as f64
}

/// Keep records whose completeness is at least `min_fraction`.
pub fn completeness_filter(records: Vec<CrashRecord>, dict: &FeatureDictionary, min_fraction: f64) -> (Vec<CrashRecord>, Vec<CrashRecord>) {
    records
        .into_iter()
        .partition(|r| completeness(r, dict) >= min_fraction)
}

/// Join, clean and filter in one pass, with a single report.
pub fn ingest(bundle: &SourceBundle, dict: &FeatureDictionary, opts: &IngestOptions) -> Result<(Vec<CrashRecord>, IngestReport), IngestError> {
    let (records, mut report) = join_records(bundle, dict, opts)?;
    let (records, unknown) = clean_features(records, dict);
    report.unknown_categories = unknown;
    let (kept, dropped) = completeness_filter(records, dict, opts.min_completeness);
    report.drop(DropReason::BelowCompleteness, dropped.len());
    Ok((kept, report))
}

/// Check a record against the dictionary: closed sets and value ranges.
pub fn validate_record(r: &CrashRecord, dict: &FeatureDictionary) -> Vec<String> {
    let mut problems = Vec::new();
    if r.case_id.is_empty() {
        problems.push("empty case_id".to_string());
    }
    if r.units.is_empty() {
        problems.push("no units".to_string());
    }
    for spec in dict.fields() {
        match (spec.kind, r.field(&spec.key)) {
            (FieldKind::Categorical, Some(FieldValue::Categorical(v))) if !spec.allowed.is_empty() && !spec.allowed.contains(&v) => {
                problems.push(format!("{} = {v:?} not in category set", spec.key));
            }
            (FieldKind::Categorical, Some(FieldValue::Set(vs))) if !spec.allowed.is_empty() => {
                for v in vs.iter().filter(|v| !spec.allowed.contains(v)) {
                    problems.push(format!("{} item {v:?} not in category set", spec.key));
                }
            }
            _ => {}
        }
    }
    if let Some(s) = r.infrastructure.speed_limit.filter(|s| !(5..=90).contains(s)) {
        problems.push(format!("speed_limit {s} outside 5..=90"));
    }
    if r.general.milepost.is_some_and(|m| m < 0.0) {
        problems.push("negative milepost".to_string());
    }
    for (i, u) in r.units.iter().enumerate() {
        if let Some(a) = u.driver_age.filter(|a| !(10..=110).contains(a)) {
            problems.push(format!("unit {} driver_age {a} outside 10..=110", i + 1));
        }
    }
    problems
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IngestError + '_ {
    move |e| IngestError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| if b { "Y" } else { "N" }.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Write records back out as the four source tables (comma-delimited), so a
/// corpus can be re-ingested. Returns the bundle describing the files.
pub fn export_tables(records: &[CrashRecord], segments: &[RoadSegment], dir: &Path) -> Result<SourceBundle, IngestError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let bundle = SourceBundle {
        crash_table: dir.join("crash.csv"),
        road_table: dir.join("road.csv"),
        unit_table: dir.join("unit.csv"),
        person_table: Some(dir.join("person.csv")),
    };
    let fact_names = ["weather", "roadway_character", "traffic_control", "driver_condition"];
    write_csv(
        &bundle.crash_table,
        &[
            "report_no",
            "crash_datetime",
            "city",
            "route_id",
            "milepost",
            "easting",
            "northing",
            "lighting",
            "road_surface",
            "work_zone",
            "intersection_related",
            "weather",
            "roadway_character",
            "traffic_control",
            "driver_condition",
            "alcohol_involved",
            "drug_involved",
            "contributing_factors",
            "injured_count",
            "severity",
            "accident_type",
        ],
        records.iter().map(|r| {
            let g = &r.general;
            let i = &r.infrastructure;
            let e = &r.event;
            let mut row = vec![
                r.case_id.clone(),
                g.crash_datetime.map(|d| d.format(DATETIME_FORMAT).to_string()).unwrap_or_default(),
                opt(&g.city),
                opt(&g.route_id),
                opt(&g.milepost),
                opt(&g.state_plane_easting),
                opt(&g.state_plane_northing),
                opt(&i.lighting),
                opt(&i.road_surface),
                opt_bool(i.work_zone),
                opt_bool(i.intersection_related),
            ];
            row.extend(fact_names.iter().map(|f| e.fact(f).unwrap_or_default().to_string()));
            row.extend([
                opt_bool(e.alcohol_involved),
                opt_bool(e.drug_involved),
                e.contributing_factors.join(&LIST_SEPARATOR.to_string()),
                r.labels.injured_count.to_string(),
                r.labels.severity.code().to_string(),
                r.labels.accident_type.abbr().to_string(),
            ]);
            row
        }),
    )?;
    write_csv(
        &bundle.road_table,
        &["route_id", "begin_mp", "end_mp", "road_type", "lane_count", "speed_limit"],
        segments.iter().map(|s| {
            vec![
                s.route_id.clone(),
                s.begin_mp.to_string(),
                s.end_mp.to_string(),
                opt(&s.road_type),
                opt(&s.lane_count),
                opt(&s.speed_limit),
            ]
        }),
    )?;
    write_csv(
        &bundle.unit_table,
        &["report_no", "unit_no", "unit_kind", "vehicle_type", "action"],
        records.iter().flat_map(|r| {
            r.units.iter().enumerate().map(|(k, u)| {
                vec![
                    r.case_id.clone(),
                    (k + 1).to_string(),
                    u.unit_kind.as_str().to_string(),
                    opt(&u.vehicle_type),
                    opt(&u.action),
                ]
            })
        }),
    )?;
    write_csv(
        bundle.person_table.as_ref().unwrap(),
        &["report_no", "unit_no", "age", "gender"],
        records.iter().flat_map(|r| {
            r.units
                .iter()
                .enumerate()
                .filter(|(_, u)| u.driver_age.is_some() || u.driver_gender.is_some())
                .map(|(k, u)| vec![r.case_id.clone(), (k + 1).to_string(), opt(&u.driver_age), opt(&u.driver_gender)])
        }),
    )?;
    Ok(bundle)
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IngestError> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(path)(e.into()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IngestError::ParseError {
                table: path.display().to_string(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
