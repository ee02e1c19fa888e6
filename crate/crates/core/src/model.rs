//! Crash records, the three outcome label codecs, and the compact crash-result notation.
//!
//! Every categorical attribute is an `Option<String>`; `None` is the single
//! Missing marker that templates, the encoder and the completeness filter all
//! key off. Label enumerations are closed and carry their canonical
//! classification token (angle-bracketed, upper case) so that prompt targets,
//! LLM responses and SFT files agree byte-for-byte.

use std::fmt;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LabelError {
    #[error("{what} {value} is out of range {lo}..={hi}")]
    OutOfRange {
        what: &'static str,
        value: i64,
        lo: i64,
        hi: i64,
    },
    #[error("unrecognised {what} label {0:?}", what = .1)]
    Unrecognised(String, &'static str),
}

/// Shared surface of the three closed label enumerations.
pub trait LabelCodec: Copy + Eq + Sized + 'static {
    const WHAT: &'static str;

    fn all() -> &'static [Self];

    fn token(self) -> &'static str;

    /// Zero-based position in [`LabelCodec::all`].
    fn index(self) -> usize {
        Self::all().iter().position(|&c| c == self).unwrap()
    }

    fn from_index(i: usize) -> Option<Self> {
        Self::all().get(i).copied()
    }

    /// Exact match on the canonical token string.
    fn from_token(token: &str) -> Option<Self> {
        Self::all().iter().copied().find(|c| c.token() == token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InjuryBucket {
    Zero,
    One,
    Two,
    ThreeOrMore,
}

impl InjuryBucket {
    pub fn name(self) -> &'static str {
        match self {
            InjuryBucket::Zero => "ZERO",
            InjuryBucket::One => "ONE",
            InjuryBucket::Two => "TWO",
            InjuryBucket::ThreeOrMore => "THREE_OR_MORE",
        }
    }
}

impl LabelCodec for InjuryBucket {
    const WHAT: &'static str = "injury bucket";

    fn all() -> &'static [Self] {
        &[
            InjuryBucket::Zero,
            InjuryBucket::One,
            InjuryBucket::Two,
            InjuryBucket::ThreeOrMore,
        ]
    }

    fn token(self) -> &'static str {
        match self {
            InjuryBucket::Zero => "<ZERO>",
            InjuryBucket::One => "<ONE>",
            InjuryBucket::Two => "<TWO>",
            InjuryBucket::ThreeOrMore => "<THREE OR MORE>",
        }
    }
}

/// Collapse an injured-person count into the four prediction buckets.
pub fn bucket_injuries(t: u32) -> InjuryBucket {
    match t {
        0 => InjuryBucket::Zero,
        1 => InjuryBucket::One,
        2 => InjuryBucket::Two,
        _ => InjuryBucket::ThreeOrMore,
    }
}

/// KABCO severity, ordered from least (O) to most (K) severe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    O,
    C,
    B,
    A,
    K,
}

impl Severity {
    pub fn code(self) -> char {
        match self {
            Severity::O => 'O',
            Severity::C => 'C',
            Severity::B => 'B',
            Severity::A => 'A',
            Severity::K => 'K',
        }
    }

    pub fn ordinal(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Severity::O => "No Apparent Injury",
            Severity::C => "Possible Injury",
            Severity::B => "Minor Injury",
            Severity::A => "Serious Injury",
            Severity::K => "Fatal",
        }
    }

    pub fn from_code(code: char) -> Option<Severity> {
        Self::all().iter().copied().find(|s| s.code() == code)
    }
}

pub fn severity_from_ordinal(n: i64) -> Result<Severity, LabelError> {
    if !(1..=5).contains(&n) {
        return Err(LabelError::OutOfRange {
            what: "severity ordinal",
            value: n,
            lo: 1,
            hi: 5,
        });
    }
    Ok(Severity::all()[(n - 1) as usize])
}

impl LabelCodec for Severity {
    const WHAT: &'static str = "severity";

    fn all() -> &'static [Self] {
        &[Severity::O, Severity::C, Severity::B, Severity::A, Severity::K]
    }

    fn token(self) -> &'static str {
        match self {
            Severity::O => "<NO APPARENT INJURY>",
            Severity::C => "<POSSIBLE INJURY>",
            Severity::B => "<MINOR INJURY>",
            Severity::A => "<SERIOUS INJURY>",
            Severity::K => "<FATAL>",
        }
    }
}

/// The fourteen accident types, in their numbered order (1 = SVO ... 14 = AIL).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccidentType {
    #[serde(rename = "SVO")]
    SingleVehicleObject,
    #[serde(rename = "AIR")]
    AngleImpactRight,
    #[serde(rename = "Oth")]
    Other,
    #[serde(rename = "SL")]
    SideswipeLeft,
    #[serde(rename = "FEC")]
    FrontEnd,
    #[serde(rename = "REC")]
    RearEnd,
    #[serde(rename = "OT")]
    Overturn,
    #[serde(rename = "AC")]
    Animal,
    #[serde(rename = "PC")]
    Pedestrian,
    #[serde(rename = "SR")]
    SideswipeRight,
    #[serde(rename = "PCC")]
    Pedalcyclist,
    #[serde(rename = "HOC")]
    HeadOn,
    #[serde(rename = "OR")]
    OffRoad,
    #[serde(rename = "AIL")]
    AngleImpactLeft,
}

impl AccidentType {
    pub fn id(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn abbr(self) -> &'static str {
        use AccidentType::*;
        match self {
            SingleVehicleObject => "SVO",
            AngleImpactRight => "AIR",
            Other => "Oth",
            SideswipeLeft => "SL",
            FrontEnd => "FEC",
            RearEnd => "REC",
            Overturn => "OT",
            Animal => "AC",
            Pedestrian => "PC",
            SideswipeRight => "SR",
            Pedalcyclist => "PCC",
            HeadOn => "HOC",
            OffRoad => "OR",
            AngleImpactLeft => "AIL",
        }
    }

    pub fn name(self) -> &'static str {
        use AccidentType::*;
        match self {
            SingleVehicleObject => "Single Vehicle With Object",
            AngleImpactRight => "Angle Impacts Right",
            Other => "Other",
            SideswipeLeft => "Sideswipes Left",
            FrontEnd => "Front End Collision",
            RearEnd => "Rear End Collision",
            Overturn => "Overturn",
            Animal => "Animal Collision",
            Pedestrian => "Pedestrian Collision",
            SideswipeRight => "Sideswipes Right",
            Pedalcyclist => "Pedal Cyclist Collision",
            HeadOn => "Head On Collision",
            OffRoad => "Off Road",
            AngleImpactLeft => "Angle Impact Left",
        }
    }

    pub fn from_abbr(abbr: &str) -> Option<AccidentType> {
        Self::all().iter().copied().find(|a| a.abbr() == abbr)
    }
}

pub fn accident_type_from_id(n: i64) -> Result<AccidentType, LabelError> {
    if !(1..=14).contains(&n) {
        return Err(LabelError::OutOfRange {
            what: "accident type id",
            value: n,
            lo: 1,
            hi: 14,
        });
    }
    Ok(AccidentType::all()[(n - 1) as usize])
}

impl LabelCodec for AccidentType {
    const WHAT: &'static str = "accident type";

    fn all() -> &'static [Self] {
        use AccidentType::*;
        &[
            SingleVehicleObject,
            AngleImpactRight,
            Other,
            SideswipeLeft,
            FrontEnd,
            RearEnd,
            Overturn,
            Animal,
            Pedestrian,
            SideswipeRight,
            Pedalcyclist,
            HeadOn,
            OffRoad,
            AngleImpactLeft,
        ]
    }

    fn token(self) -> &'static str {
        use AccidentType::*;
        match self {
            SingleVehicleObject => "<SINGLE VEHICLE WITH OBJECT>",
            AngleImpactRight => "<ANGLE IMPACTS_RIGHT>",
            Other => "<OTHER>",
            SideswipeLeft => "<SIDESWIPES_LEFT>",
            FrontEnd => "<FRONT END COLLISIONS>",
            RearEnd => "<REAR END COLLISIONS>",
            Overturn => "<OVERTURN>",
            Animal => "<ANIMAL COLLISIONS>",
            Pedestrian => "<PEDESTRIAN COLLISIONS>",
            SideswipeRight => "<SIDESWIPES_RIGHT>",
            Pedalcyclist => "<PEDALCYCLIST COLLISIONS>",
            HeadOn => "<HEAD ON COLLISIONS>",
            OffRoad => "<OFF ROAD>",
            AngleImpactLeft => "<ANGLE IMPACTS_LEFT>",
        }
    }
}

/// The three prediction tasks. Each is trained and evaluated separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Injury,
    Severity,
    AccidentType,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Injury, Task::Severity, Task::AccidentType];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Injury => "injury",
            Task::Severity => "severity",
            Task::AccidentType => "accident_type",
        }
    }

    pub fn n_classes(self) -> usize {
        self.tokens().len()
    }

    pub fn tokens(self) -> Vec<&'static str> {
        match self {
            Task::Injury => InjuryBucket::all().iter().map(|c| c.token()).collect(),
            Task::Severity => Severity::all().iter().map(|c| c.token()).collect(),
            Task::AccidentType => AccidentType::all().iter().map(|c| c.token()).collect(),
        }
    }

    /// Short human names used as class labels in reports.
    pub fn class_names(self) -> Vec<String> {
        match self {
            Task::Injury => InjuryBucket::all().iter().map(|c| c.name().to_string()).collect(),
            Task::Severity => Severity::all().iter().map(|c| c.code().to_string()).collect(),
            Task::AccidentType => AccidentType::all().iter().map(|c| c.abbr().to_string()).collect(),
        }
    }

    pub fn label_index(self, labels: &Labels) -> usize {
        match self {
            Task::Injury => labels.injury_bucket().index(),
            Task::Severity => labels.severity.index(),
            Task::AccidentType => labels.accident_type.index(),
        }
    }

    pub fn token_of(self, labels: &Labels) -> &'static str {
        match self {
            Task::Injury => labels.injury_bucket().token(),
            Task::Severity => labels.severity.token(),
            Task::AccidentType => labels.accident_type.token(),
        }
    }

    /// Class index of an exact token for this task.
    pub fn index_of_token(self, token: &str) -> Option<usize> {
        self.tokens().iter().position(|t| *t == token)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "injury" => Ok(Task::Injury),
            "severity" => Ok(Task::Severity),
            "accident_type" | "type" => Ok(Task::AccidentType),
            other => Err(LabelError::Unrecognised(other.to_string(), "task")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub injured_count: u32,
    pub severity: Severity,
    pub accident_type: AccidentType,
}

impl Labels {
    pub fn injury_bucket(&self) -> InjuryBucket {
        bucket_injuries(self.injured_count)
    }
}

/// Flat ASCII rendering of the crash result, `<AT>_<S>^<bucket>`.
pub fn format_crash_result(labels: &Labels) -> String {
    format!(
        "{}_{}^{}",
        labels.accident_type.abbr(),
        labels.severity.code(),
        labels.injury_bucket().name()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Vehicle => "vehicle",
            UnitKind::Pedestrian => "pedestrian",
            UnitKind::Cyclist => "cyclist",
        }
    }

    pub fn parse(s: &str) -> Option<UnitKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vehicle" | "motor_vehicle" | "veh" => Some(UnitKind::Vehicle),
            "pedestrian" | "ped" => Some(UnitKind::Pedestrian),
            "cyclist" | "bicyclist" | "pedalcyclist" | "bike" => Some(UnitKind::Cyclist),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneralInfo {
    pub crash_datetime: Option<NaiveDateTime>,
    pub city: Option<String>,
    pub route_id: Option<String>,
    pub milepost: Option<f64>,
    pub road_type: Option<String>,
    pub state_plane_easting: Option<f64>,
    pub state_plane_northing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InfrastructureInfo {
    pub lane_count: Option<u32>,
    pub speed_limit: Option<u32>,
    pub work_zone: Option<bool>,
    pub lighting: Option<String>,
    pub road_surface: Option<String>,
    pub intersection_related: Option<bool>,
}

/// One named circumstance from the crash narrative, e.g. `weather = rain`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeFact {
    pub factor: String,
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventInfo {
    pub narrative_facts: Vec<NarrativeFact>,
    pub alcohol_involved: Option<bool>,
    pub drug_involved: Option<bool>,
    pub contributing_factors: Vec<String>,
}

impl EventInfo {
    pub fn fact(&self, factor: &str) -> Option<&str> {
        self.narrative_facts
            .iter()
            .find(|f| f.factor == factor)
            .and_then(|f| f.value.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitInfo {
    pub unit_kind: UnitKind,
    pub vehicle_type: Option<String>,
    pub driver_age: Option<u32>,
    pub driver_gender: Option<String>,
    pub action: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub case_id: String,
    pub general: GeneralInfo,
    pub infrastructure: InfrastructureInfo,
    pub event: EventInfo,
    pub units: Vec<UnitInfo>,
    pub labels: Labels,
}

/// A record attribute resolved by dictionary key.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Categorical(String),
    Numeric(f64),
    Boolean(bool),
    Text(String),
    Set(Vec<String>),
    Missing,
}

impl FieldValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, FieldValue::Missing)
    }
}

fn cat(v: &Option<String>) -> FieldValue {
    v.as_ref()
        .map(|s| FieldValue::Categorical(s.clone()))
        .unwrap_or(FieldValue::Missing)
}

fn num<T: Into<f64> + Copy>(v: Option<T>) -> FieldValue {
    v.map(|x| FieldValue::Numeric(x.into())).unwrap_or(FieldValue::Missing)
}

fn boolean(v: Option<bool>) -> FieldValue {
    v.map(FieldValue::Boolean).unwrap_or(FieldValue::Missing)
}

/// Keys resolved against a single unit (the first unit when read from a record).
pub const UNIT_KEYS: &[&str] = &["unit_kind", "vehicle_type", "driver_age", "driver_gender", "unit_action"];

/// Every fixed key [`CrashRecord::field`] resolves; `fact.<name>` keys are also accepted.
pub const RECORD_KEYS: &[&str] = &[
    "crash_hour",
    "crash_weekday",
    "city",
    "route_id",
    "milepost",
    "road_type",
    "easting",
    "northing",
    "lane_count",
    "speed_limit",
    "work_zone",
    "lighting",
    "road_surface",
    "intersection_related",
    "alcohol_involved",
    "drug_involved",
    "contributing_factors",
    "unit_count",
    "vehicle_count",
    "pedestrian_involved",
    "cyclist_involved",
    "unit_kind",
    "vehicle_type",
    "driver_age",
    "driver_gender",
    "unit_action",
];

pub fn is_record_key(key: &str) -> bool {
    RECORD_KEYS.contains(&key) || key.strip_prefix("fact.").is_some_and(|f| !f.is_empty())
}

/// Keys that describe the outcome and must never reach a model input.
pub const LABEL_KEYS: &[&str] = &["injured_count", "severity", "accident_type"];

impl UnitInfo {
    pub fn field(&self, key: &str) -> Option<FieldValue> {
        Some(match key {
            "unit_kind" => FieldValue::Categorical(self.unit_kind.as_str().to_string()),
            "vehicle_type" => cat(&self.vehicle_type),
            "driver_age" => num(self.driver_age),
            "driver_gender" => cat(&self.driver_gender),
            "unit_action" => cat(&self.action),
            _ => return None,
        })
    }
}

impl CrashRecord {
    /// Resolve a feature-dictionary key. `None` means the key is unknown to
    /// the record model; `Some(FieldValue::Missing)` means the value is absent.
    pub fn field(&self, key: &str) -> Option<FieldValue> {
        if let Some(factor) = key.strip_prefix("fact.") {
            return Some(
                self.event
                    .fact(factor)
                    .map(|v| FieldValue::Categorical(v.to_string()))
                    .unwrap_or(FieldValue::Missing),
            );
        }
        if UNIT_KEYS.contains(&key) {
            return match self.units.first() {
                Some(u) => u.field(key),
                None => Some(FieldValue::Missing),
            };
        }
        let g = &self.general;
        let i = &self.infrastructure;
        let e = &self.event;
        Some(match key {
            "crash_hour" => num(g.crash_datetime.map(|d| d.hour())),
            "crash_weekday" => g
                .crash_datetime
                .map(|d| FieldValue::Categorical(weekday_name(d).to_string()))
                .unwrap_or(FieldValue::Missing),
            "city" => cat(&g.city),
            "route_id" => cat(&g.route_id),
            "milepost" => num(g.milepost),
            "road_type" => cat(&g.road_type),
            "easting" => num(g.state_plane_easting),
            "northing" => num(g.state_plane_northing),
            "lane_count" => num(i.lane_count),
            "speed_limit" => num(i.speed_limit),
            "work_zone" => boolean(i.work_zone),
            "lighting" => cat(&i.lighting),
            "road_surface" => cat(&i.road_surface),
            "intersection_related" => boolean(i.intersection_related),
            "alcohol_involved" => boolean(e.alcohol_involved),
            "drug_involved" => boolean(e.drug_involved),
            "contributing_factors" => FieldValue::Set(e.contributing_factors.clone()),
            "unit_count" => FieldValue::Numeric(self.units.len() as f64),
            "vehicle_count" => FieldValue::Numeric(self.count_units(UnitKind::Vehicle) as f64),
            "pedestrian_involved" => FieldValue::Boolean(self.count_units(UnitKind::Pedestrian) > 0),
            "cyclist_involved" => FieldValue::Boolean(self.count_units(UnitKind::Cyclist) > 0),
            _ => return None,
        })
    }

    pub fn count_units(&self, kind: UnitKind) -> usize {
        self.units.iter().filter(|u| u.unit_kind == kind).count()
    }

    pub fn month(&self) -> Option<u32> {
        self.general.crash_datetime.map(|d| d.month())
    }
}

pub fn weekday_name(d: NaiveDateTime) -> &'static str {
    match d.weekday() {
        chrono::Weekday::Mon => "monday",
        chrono::Weekday::Tue => "tuesday",
        chrono::Weekday::Wed => "wednesday",
        chrono::Weekday::Thu => "thursday",
        chrono::Weekday::Fri => "friday",
        chrono::Weekday::Sat => "saturday",
        chrono::Weekday::Sun => "sunday",
    }
}
