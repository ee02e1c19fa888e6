//! Counterfactual test sets: convert a share of non-adverse cases into
//! adverse ones (alcohol, icy road, work zone) in place, then compare
//! predicted class counts before and after.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dictionary::FeatureDictionary;
use crate::exec::Exec;
use crate::model::CrashRecord;
use crate::sampler::rng_for;
use crate::textualize::{render_paragraphs, TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum WhatIfError {
    #[error("no non-adverse cases to convert for factor {0}")]
    EmptyComplement(Factor),
    #[error("prediction lists differ in length: {before} before, {after} after")]
    LengthMismatch { before: usize, after: usize },
    #[error("field {0:?} cannot be rewritten")]
    UnsupportedKey(String),
    #[error("invalid rate {0:?}: expected a positive number or \"all\"")]
    InvalidRate(String),
    #[error("unknown factor {0:?}")]
    UnknownFactor(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Alcohol,
    IcyRoad,
    WorkZone,
}

/// Contributing factor added by the alcohol rewrite.
pub const IMPAIRMENT_FACTOR: &str = "under_influence";

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Alcohol, Factor::IcyRoad, Factor::WorkZone];

    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Alcohol => "alcohol",
            Factor::IcyRoad => "icy_road",
            Factor::WorkZone => "work_zone",
        }
    }

    /// The adverse condition holds. Missing counts as not holding.
    pub fn holds(self, r: &CrashRecord) -> bool {
        match self {
            Factor::Alcohol => r.event.alcohol_involved == Some(true),
            Factor::IcyRoad => r.infrastructure.road_surface.as_deref() == Some("icy"),
            Factor::WorkZone => r.infrastructure.work_zone == Some(true),
        }
    }

    /// Make the condition hold, plus any dictionary-declared dependent rewrites.
    pub fn rewrite(self, r: &CrashRecord, dict: &FeatureDictionary) -> Result<CrashRecord, WhatIfError> {
        let mut out = r.clone();
        match self {
            Factor::Alcohol => {
                out.event.alcohol_involved = Some(true);
                if !out.event.contributing_factors.iter().any(|f| f == IMPAIRMENT_FACTOR) {
                    out.event.contributing_factors.push(IMPAIRMENT_FACTOR.to_string());
                }
            }
            Factor::IcyRoad => out.infrastructure.road_surface = Some("icy".to_string()),
            Factor::WorkZone => out.infrastructure.work_zone = Some(true),
        }
        for dep in dict.dependents(self.as_str()) {
            set_field(&mut out, &dep.key, &dep.value)?;
        }
        Ok(out)
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Factor {
    type Err = WhatIfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Factor::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| WhatIfError::UnknownFactor(s.to_string()))
    }
}

fn parse_flag(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "y" | "1" => Some(true),
        "false" | "no" | "n" | "0" => Some(false),
        _ => None,
    }
}

/// Overwrite a categorical or boolean record field by dictionary key.
pub fn set_field(r: &mut CrashRecord, key: &str, value: &str) -> Result<(), WhatIfError> {
    let unsupported = || WhatIfError::UnsupportedKey(key.to_string());
    if let Some(factor) = key.strip_prefix("fact.") {
        match r.event.narrative_facts.iter_mut().find(|f| f.factor == factor) {
            Some(f) => f.value = Some(value.to_string()),
            None => r.event.narrative_facts.push(crate::model::NarrativeFact {
                factor: factor.to_string(),
                value: Some(value.to_string()),
            }),
        }
        return Ok(());
    }
    let flag = || parse_flag(value).ok_or_else(unsupported);
    match key {
        "lighting" => r.infrastructure.lighting = Some(value.to_string()),
        "road_surface" => r.infrastructure.road_surface = Some(value.to_string()),
        "road_type" => r.general.road_type = Some(value.to_string()),
        "work_zone" => r.infrastructure.work_zone = Some(flag()?),
        "intersection_related" => r.infrastructure.intersection_related = Some(flag()?),
        "alcohol_involved" => r.event.alcohol_involved = Some(flag()?),
        "drug_involved" => r.event.drug_involved = Some(flag()?),
        "contributing_factors" => {
            if !r.event.contributing_factors.iter().any(|f| f == value) {
                r.event.contributing_factors.push(value.to_string());
            }
        }
        _ => return Err(unsupported()),
    }
    Ok(())
}

/// How many non-adverse cases to convert, relative to the adverse base count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    Multiple(f64),
    All,
}

impl Rate {
    pub const STANDARD: [Rate; 3] = [Rate::Multiple(1.0), Rate::Multiple(2.0), Rate::All];

    pub fn label(self) -> String {
        match self {
            Rate::Multiple(m) => format!("+{}%", (m * 100.0).round()),
            Rate::All => "ALL".to_string(),
        }
    }

    /// File-name friendly form, e.g. `p100`, `all`.
    pub fn slug(self) -> String {
        match self {
            Rate::Multiple(m) => format!("p{}", (m * 100.0).round()),
            Rate::All => "all".to_string(),
        }
    }

    pub fn selected_count(self, base: usize, complement: usize) -> usize {
        match self {
            Rate::Multiple(m) => ((base as f64 * m).round() as usize).min(complement),
            Rate::All => complement,
        }
    }
}

impl FromStr for Rate {
    type Err = WhatIfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("all") {
            return Ok(Rate::All);
        }
        let pct = t.trim_start_matches('+');
        let value = match pct.strip_suffix('%') {
            Some(p) => p.parse::<f64>().map(|v| v / 100.0),
            None => pct.parse::<f64>(),
        };
        match value {
            Ok(v) if v.is_finite() && v > 0.0 => Ok(Rate::Multiple(v)),
            _ => Err(WhatIfError::InvalidRate(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub factor: Factor,
    pub rate: Rate,
    pub seed: u64,
    pub base_count: usize,
    pub complement_count: usize,
    /// In test-set order.
    pub selected_case_ids: Vec<String>,
}

impl PerturbationPlan {
    pub fn adverse_total(&self) -> usize {
        self.base_count + self.selected_case_ids.len()
    }

    pub fn empty(factor: Factor, seed: u64) -> Self {
        PerturbationPlan {
            factor,
            rate: Rate::Multiple(0.0),
            seed,
            base_count: 0,
            complement_count: 0,
            selected_case_ids: Vec::new(),
        }
    }
}

/// Choose which non-adverse cases to convert, uniformly without replacement.
pub fn plan(test: &[CrashRecord], factor: Factor, rate: Rate, seed: u64) -> Result<PerturbationPlan, WhatIfError> {
    let complement: Vec<usize> = (0..test.len()).filter(|&i| !factor.holds(&test[i])).collect();
    if complement.is_empty() {
        return Err(WhatIfError::EmptyComplement(factor));
    }
    let base_count = test.len() - complement.len();
    let k = rate.selected_count(base_count, complement.len());
    let mut rng = rng_for(seed, factor as u64);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, complement.len(), k)
        .into_iter()
        .map(|j| complement[j])
        .collect();
    picked.sort_unstable();
    Ok(PerturbationPlan {
        factor,
        rate,
        seed,
        base_count,
        complement_count: complement.len(),
        selected_case_ids: picked.into_iter().map(|i| test[i].case_id.clone()).collect(),
    })
}

/// Rewrite the planned records in place; all other records are cloned unchanged.
pub fn apply_records(
    test: &[CrashRecord],
    plan: &PerturbationPlan,
    dict: &FeatureDictionary,
    exec: Exec,
) -> Result<Vec<CrashRecord>, WhatIfError> {
    let selected: HashSet<&str> = plan.selected_case_ids.iter().map(String::as_str).collect();
    exec.map(test, |r| {
        if selected.contains(r.case_id.as_str()) {
            plan.factor.rewrite(r, dict)
        } else {
            Ok(r.clone())
        }
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSet {
    pub records: Vec<CrashRecord>,
    pub paragraphs: Vec<[String; 4]>,
}

/// Rewrite planned records and regenerate every record's paragraphs.
pub fn apply(
    test: &[CrashRecord],
    plan: &PerturbationPlan,
    templates: &TemplateSet,
    dict: &FeatureDictionary,
    exec: Exec,
) -> Result<PerturbedSet, WhatIfError> {
    let records = apply_records(test, plan, dict, exec)?;
    let paragraphs = exec
        .map(&records, |r| render_paragraphs(r, templates, dict))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PerturbedSet { records, paragraphs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShift {
    pub class: String,
    pub before: usize,
    pub after: usize,
    pub delta: i64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub classes: Vec<ClassShift>,
}

impl ShiftReport {
    pub fn delta_of(&self, class: &str) -> Option<i64> {
        self.classes.iter().find(|c| c.class == class).map(|c| c.delta)
    }

    /// Plot data: one `class,delta,relative` row per class.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("class,delta,relative\n");
        for c in &self.classes {
            out.push_str(&format!("{},{},{:.6}\n", c.class, c.delta, c.relative));
        }
        out
    }
}

/// Per-class change in predicted counts.
pub fn shift_report(before: &[usize], after: &[usize], class_names: &[String]) -> Result<ShiftReport, WhatIfError> {
    if before.len() != after.len() {
        return Err(WhatIfError::LengthMismatch {
            before: before.len(),
            after: after.len(),
        });
    }
    let count = |preds: &[usize], c: usize| preds.iter().filter(|p| **p == c).count();
    let classes = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (b, a) = (count(before, c), count(after, c));
            let delta = a as i64 - b as i64;
            ClassShift {
                class: name.clone(),
                before: b,
                after: a,
                delta,
                relative: delta as f64 / b.max(1) as f64,
            }
        })
        .collect();
    Ok(ShiftReport { classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> CrashRecord {
        serde_json::from_str(include_str!("../tests/fixtures/record.json")).unwrap()
    }

    /// `base` adverse records followed by `complement` clean ones.
    fn test_set(factor: Factor, base: usize, complement: usize) -> Vec<CrashRecord> {
        let d = FeatureDictionary::default();
        (0..base + complement)
            .map(|i| {
                let mut r = fixture();
                r.case_id = format!("T{i:04}");
                r.event.alcohol_involved = Some(false);
                r.infrastructure.road_surface = Some("dry".into());
                r.infrastructure.work_zone = Some(false);
                if i < base {
                    r = factor.rewrite(&r, &d).unwrap();
                }
                r
            })
            .collect()
    }

    #[test]
    fn cardinalities_for_each_rate() {
        for factor in Factor::ALL {
            let t = test_set(factor, 63, 779);
            let expect = [(Rate::Multiple(1.0), 63, 126), (Rate::Multiple(2.0), 126, 189), (Rate::All, 779, 842)];
            for (rate, selected, adverse) in expect {
                let p = plan(&t, factor, rate, 5).unwrap();
                assert_eq!(p.selected_case_ids.len(), selected);
                assert_eq!(p.adverse_total(), adverse);
                let out = apply_records(&t, &p, &FeatureDictionary::default(), Exec::default()).unwrap();
                assert_eq!(out.len(), 842);
                assert_eq!(out.iter().filter(|r| factor.holds(r)).count(), adverse);
            }
        }
    }

    #[test]
    fn missing_counts_as_complement() {
        let mut t = test_set(Factor::Alcohol, 1, 2);
        t[2].event.alcohol_involved = None;
        let p = plan(&t, Factor::Alcohol, Rate::All, 1).unwrap();
        assert_eq!(p.complement_count, 2);
    }

    #[test]
    fn all_adverse_has_empty_complement() {
        let t = test_set(Factor::WorkZone, 4, 0);
        assert!(matches!(
            plan(&t, Factor::WorkZone, Rate::All, 1),
            Err(WhatIfError::EmptyComplement(Factor::WorkZone))
        ));
    }

    #[test]
    fn rate_parsing() {
        assert_eq!("all".parse::<Rate>().unwrap(), Rate::All);
        assert_eq!("+100%".parse::<Rate>().unwrap(), Rate::Multiple(1.0));
        assert_eq!("2.0".parse::<Rate>().unwrap(), Rate::Multiple(2.0));
        assert!("-1".parse::<Rate>().is_err());
        assert_eq!(Rate::Multiple(2.0).label(), "+200%");
    }

    #[test]
    fn shift_deltas() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = shift_report(&[0, 0, 1, 2], &[0, 1, 1, 1], &names).unwrap();
        let deltas: Vec<i64> = r.classes.iter().map(|c| c.delta).collect();
        assert_eq!(deltas, [-1, 2, -1]);
        assert_eq!(r.classes[0].relative, -0.5);
        assert_eq!(r.classes[2].relative, -1.0);
        assert_eq!(deltas.iter().sum::<i64>(), 0);
        assert!(shift_report(&[0], &[], &names).is_err());
    }

    #[test]
    fn dependent_rewrites_come_from_the_dictionary() {
        let text = format!("{}\ndepends icy_road fact.weather=snow\n", crate::dictionary::DEFAULT_DICTIONARY);
        let d = FeatureDictionary::parse(&text).unwrap();
        let r = Factor::IcyRoad.rewrite(&fixture(), &d).unwrap();
        assert_eq!(r.event.fact("weather"), Some("snow"));
        let plain = Factor::IcyRoad.rewrite(&fixture(), &FeatureDictionary::default()).unwrap();
        assert_eq!(plain.event.fact("weather"), Some("rain"));
    }
}
