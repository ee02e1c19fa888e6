//! Month-based splitting, injury-uniform resampling and the seeded synthetic
//! corpus generator.
//!
//! All randomness comes from ChaCha8 streams derived from one seed. Record `i`
//! of a synthetic corpus draws from stream `i`, so generation can be sharded
//! without changing the output.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::Exec;
use crate::geo::{GeoPoint, Lcc, LccParams};
use crate::ingest::RoadSegment;
use crate::model::{
    AccidentType, CrashRecord, EventInfo, GeneralInfo, InfrastructureInfo, InjuryBucket, LabelCodec, Labels,
    NarrativeFact, Severity, UnitInfo, UnitKind,
};

pub const DEFAULT_SEED: u64 = 20220101;
pub const DEFAULT_TEST_MONTHS: [u32; 3] = [1, 6, 12];

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("injury bucket {0} has no records")]
    EmptyBucket(&'static str),
    #[error("invalid split spec: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleTarget {
    UniformInjury,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_months: BTreeSet<u32>,
    pub seed: u64,
    pub resample: ResampleTarget,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_months: DEFAULT_TEST_MONTHS.into_iter().collect(),
            seed: DEFAULT_SEED,
            resample: ResampleTarget::UniformInjury,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.test_months.is_empty() {
            return Err(SamplerError::InvalidSplit("test_months is empty".into()));
        }
        if let Some(m) = self.test_months.iter().find(|m| !(1..=12).contains(*m)) {
            return Err(SamplerError::InvalidSplit(format!("month {m} outside 1..=12")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<CrashRecord>,
    pub test: Vec<CrashRecord>,
    /// Records without a crash date.
    pub unassigned: Vec<CrashRecord>,
}

/// Partition by crash month. Input order is preserved within each part.
pub fn split(records: &[CrashRecord], spec: &SplitSpec) -> Result<Split, SamplerError> {
    spec.validate()?;
    let mut out = Split::default();
    for r in records {
        match r.month() {
            None => out.unassigned.push(r.clone()),
            Some(m) if spec.test_months.contains(&m) => out.test.push(r.clone()),
            Some(_) => out.train.push(r.clone()),
        }
    }
    Ok(out)
}

/// Downsample every injury bucket to the smallest bucket's size, without
/// replacement. Selected records keep their relative input order.
pub fn resample_uniform_injury(test: &[CrashRecord], seed: u64) -> Result<Vec<CrashRecord>, SamplerError> {
    let mut by_bucket: BTreeMap<InjuryBucket, Vec<usize>> = BTreeMap::new();
    for (i, r) in test.iter().enumerate() {
        by_bucket.entry(r.labels.injury_bucket()).or_default().push(i);
    }
    for b in InjuryBucket::all() {
        if !by_bucket.contains_key(b) {
            return Err(SamplerError::EmptyBucket(b.name()));
        }
    }
    let k = by_bucket.values().map(Vec::len).min().unwrap_or(0);
    let mut keep: Vec<usize> = Vec::with_capacity(k * by_bucket.len());
    for (bucket, members) in &by_bucket {
        let mut rng = rng_for(seed, bucket.index() as u64);
        let picked = rand::seq::index::sample(&mut rng, members.len(), k);
        keep.extend(picked.iter().map(|j| members[j]));
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| test[i].clone()).collect())
}

/// Case ids per partition, written next to split outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_months: Vec<u32>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub unassigned: Vec<String>,
    pub eval_subset: Option<Vec<String>>,
}

impl SplitManifest {
    pub fn new(spec: &SplitSpec, split: &Split, eval_subset: Option<&[CrashRecord]>) -> Self {
        let ids = |rs: &[CrashRecord]| rs.iter().map(|r| r.case_id.clone()).collect();
        SplitManifest {
            seed: spec.seed,
            test_months: spec.test_months.iter().copied().collect(),
            train: ids(&split.train),
            test: ids(&split.test),
            unassigned: ids(&split.unassigned),
            eval_subset: eval_subset.map(ids),
        }
    }
}

/// Record attribute a planted effect conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    IcyRoad,
    WetRoad,
    WorkZone,
    Alcohol,
    Intersection,
    DarkUnlit,
    HighSpeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEffect {
    pub when: Condition,
    pub class: AccidentType,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityEffect {
    pub when: Condition,
    pub class: Severity,
    pub multiplier: f64,
}

/// Planted conditional effects. When a condition holds, the affected class's
/// probability is the base probability times the multiplier; the remaining
/// classes are rescaled to fill the rest. This makes
/// `P(class | condition) / P(class | not condition)` equal the multiplier
/// whenever the condition is independent of the other inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub type_effects: Vec<TypeEffect>,
    pub severity_effects: Vec<SeverityEffect>,
}

impl Default for EffectTable {
    fn default() -> Self {
        use AccidentType as At;
        let t = |when, class, multiplier| TypeEffect { when, class, multiplier };
        let s = |when, class, multiplier| SeverityEffect { when, class, multiplier };
        EffectTable {
            type_effects: vec![
                t(Condition::IcyRoad, At::Overturn, 3.0),
                t(Condition::WorkZone, At::RearEnd, 1.6),
                t(Condition::Intersection, At::AngleImpactRight, 2.0),
                t(Condition::Intersection, At::AngleImpactLeft, 2.0),
                t(Condition::Alcohol, At::HeadOn, 2.5),
                t(Condition::Alcohol, At::OffRoad, 1.5),
                t(Condition::DarkUnlit, At::Animal, 1.8),
                t(Condition::WetRoad, At::SideswipeLeft, 1.3),
                t(Condition::WetRoad, At::SideswipeRight, 1.3),
            ],
            severity_effects: vec![
                s(Condition::Alcohol, Severity::A, 1.8),
                s(Condition::Alcohol, Severity::K, 2.5),
                s(Condition::HighSpeed, Severity::K, 1.5),
                s(Condition::HighSpeed, Severity::A, 1.3),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub seed: u64,
    pub effects: EffectTable,
    /// Per-field probability that an optional attribute is left Missing.
    pub missing_rate: f64,
    /// Probability that a record has no crash date.
    pub undated_rate: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_records: 20_000,
            seed: DEFAULT_SEED,
            effects: EffectTable::default(),
            missing_rate: 0.03,
            undated_rate: 0.005,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SamplerError> {
        for (name, p) in [("missing_rate", self.missing_rate), ("undated_rate", self.undated_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SamplerError::InvalidSpec(format!("{name} = {p} not in [0, 1]")));
            }
        }
        let mults = self
            .effects
            .type_effects
            .iter()
            .map(|e| e.multiplier)
            .chain(self.effects.severity_effects.iter().map(|e| e.multiplier));
        for m in mults {
            if !(m.is_finite() && m > 0.0) {
                return Err(SamplerError::InvalidSpec(format!("multiplier {m} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Apply multipliers to a base distribution with the rule documented on
/// [`EffectTable`]. If the boosted classes alone would exceed 1 they are
/// normalized among themselves.
pub fn apply_effects(base: &[f64], boosts: &[(usize, f64)]) -> Vec<f64> {
    let mut factor = vec![1.0; base.len()];
    for &(class, m) in boosts {
        factor[class] *= m;
    }
    let affected: Vec<bool> = factor.iter().map(|f| *f != 1.0).collect();
    let boosted: f64 = (0..base.len()).filter(|&i| affected[i]).map(|i| base[i] * factor[i]).sum();
    let rest: f64 = (0..base.len()).filter(|&i| !affected[i]).map(|i| base[i]).sum();
    if boosted < 1.0 && rest > 0.0 {
        let scale = (1.0 - boosted) / rest;
        (0..base.len())
            .map(|i| if affected[i] { base[i] * factor[i] } else { base[i] * scale })
            .collect()
    } else {
        let total = if boosted > 0.0 { boosted } else { 1.0 };
        (0..base.len())
            .map(|i| if affected[i] { base[i] * factor[i] / total } else { 0.0 })
            .collect()
    }
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn pick_str<R: Rng>(rng: &mut R, options: &[(&str, f64)]) -> String {
    let w: Vec<f64> = options.iter().map(|o| o.1).collect();
    options[pick(rng, &w)].0.to_string()
}

fn chance<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

struct Route {
    id: &'static str,
    start: (f64, f64),
    step: (f64, f64),
    length: u32,
    cities: &'static [&'static str],
}

const ROUTES: &[Route] = &[
    Route {
        id: "005",
        start: (45.62, -122.67),
        step: (0.0105, -0.0015),
        length: 160,
        cities: &["vancouver", "kelso", "longview", "centralia", "olympia", "tacoma"],
    },
    Route {
        id: "012",
        start: (46.98, -123.81),
        step: (-0.0008, 0.0165),
        length: 200,
        cities: &["aberdeen", "elma", "morton", "naches", "yakima"],
    },
    Route {
        id: "082",
        start: (46.60, -120.51),
        step: (-0.0045, 0.0115),
        length: 130,
        cities: &["yakima", "sunnyside", "prosser", "kennewick"],
    },
    Route {
        id: "101",
        start: (46.30, -124.02),
        step: (0.0085, 0.0005),
        length: 90,
        cities: &["long_beach", "raymond", "aberdeen"],
    },
    Route {
        id: "395",
        start: (46.21, -119.10),
        step: (0.0090, -0.0010),
        length: 120,
        cities: &["kennewick", "pasco", "connell", "ritzville"],
    },
    Route {
        id: "503",
        start: (45.72, -122.62),
        step: (0.0040, 0.0060),
        length: 55,
        cities: &["vancouver", "battle_ground", "amboy"],
    },
];

const SEGMENT_LENGTH: f64 = 5.0;

/// The fixed road network the generator places crashes on.
pub fn road_network(seed: u64) -> Vec<RoadSegment> {
    let mut rng = rng_for(seed, u64::MAX);
    let mut out = Vec::new();
    for route in ROUTES {
        let road_type = match route.id {
            "005" | "082" => "interstate",
            "101" | "012" | "395" => "us_route",
            _ => "state_route",
        };
        let n = (route.length as f64 / SEGMENT_LENGTH).ceil() as usize;
        for s in 0..n {
            let begin = s as f64 * SEGMENT_LENGTH;
            let interstate = road_type == "interstate";
            let lanes = if interstate { 4 + 2 * rng.random_range(0..2u32) } else { 2 + 2 * rng.random_range(0..2u32) };
            let speeds: &[u32] = if interstate { &[60, 70, 70] } else { &[40, 50, 55, 60] };
            out.push(RoadSegment {
                route_id: route.id.to_string(),
                begin_mp: begin,
                end_mp: begin + SEGMENT_LENGTH,
                road_type: Some(road_type.to_string()),
                lane_count: Some(lanes),
                speed_limit: Some(speeds[rng.random_range(0..speeds.len())]),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<CrashRecord>,
    pub segments: Vec<RoadSegment>,
}

impl SyntheticCorpus {
    /// SHA-256 over the JSON serialization of the records.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(serde_json::to_vec(r).expect("records serialize"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Config {
    Single,
    Multi(usize),
    Pedestrian,
    Cyclist,
}

fn base_types(config: Config) -> [f64; 14] {
    use AccidentType as At;
    let mut p = [0.0; 14];
    let mut set = |t: At, v: f64| p[t.index()] = v;
    match config {
        Config::Single => {
            set(At::SingleVehicleObject, 0.33);
            set(At::OffRoad, 0.28);
            set(At::Overturn, 0.15);
            set(At::Animal, 0.14);
            set(At::Other, 0.10);
        }
        Config::Multi(_) => {
            set(At::RearEnd, 0.44);
            set(At::AngleImpactRight, 0.12);
            set(At::AngleImpactLeft, 0.12);
            set(At::SideswipeLeft, 0.08);
            set(At::SideswipeRight, 0.08);
            set(At::FrontEnd, 0.05);
            set(At::HeadOn, 0.05);
            set(At::Other, 0.06);
        }
        Config::Pedestrian => {
            set(At::Pedestrian, 0.92);
            set(At::Other, 0.08);
        }
        Config::Cyclist => {
            set(At::Pedalcyclist, 0.92);
            set(At::Other, 0.08);
        }
    }
    p
}

/// Base KABCO distribution, ordered O, C, B, A, K.
fn base_severity(at: AccidentType) -> [f64; 5] {
    use AccidentType as At;
    match at {
        At::Pedestrian | At::Pedalcyclist => [0.05, 0.20, 0.35, 0.28, 0.12],
        At::HeadOn | At::Overturn | At::OffRoad => [0.35, 0.20, 0.22, 0.15, 0.08],
        At::RearEnd | At::SideswipeLeft | At::SideswipeRight => [0.62, 0.24, 0.10, 0.03, 0.01],
        _ => [0.52, 0.22, 0.15, 0.08, 0.03],
    }
}

fn actions_for(at: AccidentType) -> [&'static str; 2] {
    use AccidentType as At;
    match at {
        At::RearEnd => ["slowing", "going_straight"],
        At::AngleImpactRight => ["going_straight", "turning_right"],
        At::AngleImpactLeft => ["going_straight", "turning_left"],
        At::SideswipeLeft | At::SideswipeRight => ["changing_lanes", "going_straight"],
        At::FrontEnd => ["backing", "entering_traffic"],
        At::HeadOn => ["negotiating_curve", "going_straight"],
        At::Overturn | At::OffRoad => ["negotiating_curve", "going_straight"],
        _ => ["going_straight", "going_straight"],
    }
}

const UNIT_ACTIONS: &[&str] = &[
    "going_straight",
    "turning_left",
    "turning_right",
    "changing_lanes",
    "slowing",
    "stopped",
    "backing",
    "parked",
    "negotiating_curve",
    "entering_traffic",
];

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    segments: &'a [RoadSegment],
    lcc: Lcc,
}

impl Generator<'_> {
    fn segment(&self, route: &str, mp: f64) -> &RoadSegment {
        self.segments
            .iter()
            .find(|s| s.route_id == route && s.begin_mp <= mp && mp < s.end_mp)
            .expect("milepost lies on the network")
    }

    fn record(&self, index: usize) -> CrashRecord {
        let spec = self.spec;
        let rng = &mut rng_for(spec.seed, index as u64);

        let day = rng.random_range(0..365);
        let hour_weights: [f64; 24] = [
            1.0, 0.7, 0.6, 0.5, 0.6, 1.0, 2.0, 3.5, 4.0, 3.0, 2.8, 3.0, 3.3, 3.3, 3.5, 4.2, 4.8, 5.0, 4.0, 3.0, 2.4, 2.0, 1.6, 1.2,
        ];
        let hour = pick(rng, &hour_weights) as i64;
        let minute = 5 * rng.random_range(0..12) as i64;
        let datetime = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
            + Duration::days(day)
            + Duration::hours(hour)
            + Duration::minutes(minute);
        let month = day_month(day);
        let undated = chance(rng, spec.undated_rate);

        let route = &ROUTES[rng.random_range(0..ROUTES.len())];
        let mp = (rng.random::<f64>() * route.length as f64 * 100.0).floor() / 100.0;
        let seg = self.segment(route.id, mp);
        let city_idx = ((mp / route.length as f64) * route.cities.len() as f64) as usize;
        let city = route.cities[city_idx.min(route.cities.len() - 1)];
        let point = GeoPoint {
            lat: route.start.0 + route.step.0 * mp,
            lon: route.start.1 + route.step.1 * mp,
        };
        let (e, n) = self.lcc.forward(point).expect("network lies in the projection domain");
        let round2 = |v: f64| (v * 100.0).round() / 100.0;

        let lighting = match hour {
            7..=17 => "daylight".to_string(),
            6 => "dawn".to_string(),
            18 => "dusk".to_string(),
            _ => pick_str(rng, &[("dark_street_lights_on", 0.5), ("dark_no_street_lights", 0.5)]),
        };
        let winter = matches!(month, 11 | 12 | 1 | 2);
        let surface = if winter {
            pick_str(rng, &[("dry", 0.27), ("wet", 0.30), ("icy", 0.30), ("snow", 0.10), ("other", 0.03)])
        } else {
            pick_str(rng, &[("dry", 0.67), ("wet", 0.25), ("icy", 0.04), ("snow", 0.01), ("other", 0.03)])
        };
        let weather = match surface.as_str() {
            "icy" => pick_str(rng, &[("snow", 0.4), ("sleet", 0.2), ("clear", 0.25), ("cloudy", 0.15)]),
            "snow" => pick_str(rng, &[("snow", 0.8), ("cloudy", 0.2)]),
            "wet" => pick_str(rng, &[("rain", 0.7), ("cloudy", 0.2), ("fog", 0.1)]),
            "dry" => pick_str(rng, &[("clear", 0.6), ("cloudy", 0.35), ("fog", 0.05)]),
            _ => pick_str(rng, &[("clear", 0.5), ("cloudy", 0.5)]),
        };
        let work_zone = chance(rng, 0.05);
        let intersection = chance(rng, 0.30);
        let alcohol = chance(rng, 0.06);
        let drug = chance(rng, 0.03);
        let character = pick_str(
            rng,
            &[("straight_level", 0.5), ("straight_grade", 0.2), ("curve_level", 0.18), ("curve_grade", 0.12)],
        );
        let control = if intersection {
            pick_str(rng, &[("signal", 0.55), ("stop_sign", 0.30), ("yield_sign", 0.10), ("none", 0.05)])
        } else if work_zone {
            pick_str(rng, &[("flagger", 0.5), ("none", 0.5)])
        } else {
            pick_str(rng, &[("none", 0.95), ("signal", 0.05)])
        };
        let condition = if alcohol {
            "impaired".to_string()
        } else {
            pick_str(rng, &[("normal", 0.8), ("distracted", 0.1), ("fatigued", 0.06), ("ill", 0.04)])
        };
        let speed = seg.speed_limit.unwrap_or(50);

        let config = match pick(rng, &[0.35, 0.55, 0.06, 0.04]) {
            0 => Config::Single,
            1 => Config::Multi(if chance(rng, 0.8) { 2 } else { 3 }),
            2 => Config::Pedestrian,
            _ => Config::Cyclist,
        };
        let holds = |c: Condition| match c {
            Condition::IcyRoad => surface == "icy",
            Condition::WetRoad => surface == "wet",
            Condition::WorkZone => work_zone,
            Condition::Alcohol => alcohol,
            Condition::Intersection => intersection,
            Condition::DarkUnlit => lighting == "dark_no_street_lights",
            Condition::HighSpeed => speed >= 60,
        };
        let type_boosts: Vec<(usize, f64)> = spec
            .effects
            .type_effects
            .iter()
            .filter(|e| holds(e.when))
            .map(|e| (e.class.index(), e.multiplier))
            .collect();
        let at = AccidentType::all()[pick(rng, &apply_effects(&base_types(config), &type_boosts))];
        let sev_boosts: Vec<(usize, f64)> = spec
            .effects
            .severity_effects
            .iter()
            .filter(|e| holds(e.when))
            .map(|e| (e.class.index(), e.multiplier))
            .collect();
        let severity = Severity::all()[pick(rng, &apply_effects(&base_severity(at), &sev_boosts))];

        let n_vehicles = match config {
            Config::Single | Config::Pedestrian | Config::Cyclist => 1,
            Config::Multi(k) => k,
        };
        let injured_count = if severity == Severity::O {
            0
        } else {
            let q = match severity {
                Severity::C => 0.15,
                Severity::B => 0.25,
                Severity::A => 0.35,
                _ => 0.45,
            };
            1 + (0..n_vehicles + 2).filter(|_| chance(rng, q)).count() as u32
        };

        let mut factors = Vec::new();
        let mut cite = |rng: &mut ChaCha8Rng, f: &str, p: f64| {
            if chance(rng, p) {
                factors.push(f.to_string());
            }
        };
        if alcohol {
            cite(rng, "under_influence", 0.9);
        }
        cite(rng, "inattention", 0.25);
        cite(rng, "speeding", 0.10);
        use AccidentType as At;
        match at {
            At::RearEnd => cite(rng, "following_too_close", 0.5),
            At::AngleImpactLeft | At::AngleImpactRight => {
                cite(rng, "failure_to_yield", 0.5);
                cite(rng, "disregard_signal", 0.15);
            }
            At::SideswipeLeft | At::SideswipeRight => cite(rng, "improper_lane_change", 0.5),
            At::Overturn | At::OffRoad | At::SingleVehicleObject => cite(rng, "over_correcting", 0.25),
            At::HeadOn => cite(rng, "wrong_way", 0.3),
            _ => {}
        }
        factors.dedup();

        let mut units = Vec::new();
        let actions = actions_for(at);
        for k in 0..n_vehicles {
            let action = if chance(rng, 0.2) {
                UNIT_ACTIONS[rng.random_range(0..UNIT_ACTIONS.len())]
            } else {
                actions[k.min(1)]
            };
            units.push(self.person_unit(rng, UnitKind::Vehicle, Some(action)));
        }
        match config {
            Config::Pedestrian => {
                let a = if chance(rng, 0.7) { "crossing_road" } else { "walking_along_road" };
                units.push(self.person_unit(rng, UnitKind::Pedestrian, Some(a)));
            }
            Config::Cyclist => units.push(self.person_unit(rng, UnitKind::Cyclist, Some("riding_along_road"))),
            _ => {}
        }

        let miss = spec.missing_rate;
        let mask = |rng: &mut ChaCha8Rng, v: Option<String>| v.filter(|_| !chance(rng, miss));
        let narrative_facts = vec![
            NarrativeFact {
                factor: "weather".into(),
                value: mask(rng, Some(weather)),
            },
            NarrativeFact {
                factor: "roadway_character".into(),
                value: mask(rng, Some(character)),
            },
            NarrativeFact {
                factor: "traffic_control".into(),
                value: mask(rng, Some(control)),
            },
            NarrativeFact {
                factor: "driver_condition".into(),
                value: mask(rng, Some(condition)),
            },
        ];
        let general = GeneralInfo {
            crash_datetime: (!undated).then_some(datetime),
            city: mask(rng, Some(city.to_string())),
            route_id: Some(route.id.to_string()),
            milepost: Some(mp),
            road_type: seg.road_type.clone(),
            state_plane_easting: Some(round2(e)),
            state_plane_northing: Some(round2(n)),
        };
        let lighting = mask(rng, Some(lighting));
        let road_surface = mask(rng, Some(surface));
        let mask_bool = |rng: &mut ChaCha8Rng, v: bool| (!chance(rng, miss)).then_some(v);
        let infrastructure = InfrastructureInfo {
            lane_count: seg.lane_count,
            speed_limit: seg.speed_limit,
            work_zone: mask_bool(rng, work_zone),
            lighting,
            road_surface,
            intersection_related: mask_bool(rng, intersection),
        };
        let event = EventInfo {
            narrative_facts,
            alcohol_involved: mask_bool(rng, alcohol),
            drug_involved: mask_bool(rng, drug),
            contributing_factors: factors,
        };
        for u in &mut units {
            if chance(rng, miss) {
                u.driver_age = None;
            }
            if chance(rng, miss) {
                u.driver_gender = None;
            }
            if chance(rng, miss) {
                u.action = None;
            }
        }
        CrashRecord {
            case_id: format!("S{index:07}"),
            general,
            infrastructure,
            event,
            units,
            labels: Labels {
                injured_count,
                severity,
                accident_type: at,
            },
        }
    }

    fn person_unit(&self, rng: &mut ChaCha8Rng, kind: UnitKind, action: Option<&str>) -> UnitInfo {
        let vehicle_type = (kind == UnitKind::Vehicle).then(|| {
            pick_str(
                rng,
                &[
                    ("passenger_car", 0.50),
                    ("suv", 0.20),
                    ("pickup_truck", 0.15),
                    ("heavy_truck", 0.07),
                    ("motorcycle", 0.05),
                    ("bus", 0.03),
                ],
            )
        });
        let age = (16.0 + 64.0 * rng.random::<f64>().powf(1.3)).floor() as u32;
        UnitInfo {
            unit_kind: kind,
            vehicle_type,
            driver_age: Some(age),
            driver_gender: Some(pick_str(rng, &[("female", 0.45), ("male", 0.53), ("other", 0.02)])),
            action: action.map(str::to_string),
        }
    }
}

fn day_month(day: i64) -> u32 {
    use chrono::Datelike;
    (NaiveDate::from_ymd_opt(2022, 1, 1).unwrap() + Duration::days(day)).month()
}

/// Generate `spec.n_records` records on a fixed road network.
pub fn generate_synthetic(spec: &SyntheticSpec, exec: Exec) -> Result<SyntheticCorpus, SamplerError> {
    spec.validate()?;
    let segments = road_network(spec.seed);
    let gen = Generator {
        spec,
        segments: &segments,
        lcc: Lcc::new(LccParams::washington_south()).expect("bundled projection parameters are valid"),
    };
    let records = exec.map_range(spec.n_records, |i| gen.record(i));
    Ok(SyntheticCorpus { records, segments })
}
