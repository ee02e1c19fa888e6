//! Randomized property checks, shared by the core property tests and the
//! acceptance report. Each runs [`CASES`] generated cases.

use std::sync::OnceLock;

use crashkit::dictionary::FieldKind;
use crashkit::eval::{confusion, metrics, ConfusionMatrix};
use crashkit::ingest::clean_record;
use crashkit::model::{bucket_injuries, AccidentType, CrashRecord, InjuryBucket, LabelCodec, Severity, Task};
use crashkit::sampler::{generate_synthetic, resample_uniform_injury, SyntheticSpec};
use crashkit::textualize::{assemble_user_text, render_paragraphs, scan_leakage, TemplateSet};
use crashkit::whatif::{apply_records, plan, set_field, Factor, Rate};
use crashkit::{Exec, FeatureDictionary};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub const CASES: u32 = 1000;

pub type Check = fn() -> Result<(), String>;

/// Every property with its report name.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("label codec round-trips", codec_round_trips as Check),
        ("injury bucket monotone and onto", bucket_monotone),
        ("weighted recall equals accuracy", weighted_recall_is_accuracy),
        ("constant predictor precision p^2, F1 2p^2/(1+p)", constant_predictor_algebra),
        ("clean_features idempotent", clean_idempotent),
        ("templates never leak labels", no_label_leakage),
        ("what-if apply idempotent and conserving", apply_idempotent_conserving),
        ("resample keeps first record with probability k/n", resample_first_record_rate),
    ]
}

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn dict() -> &'static FeatureDictionary {
    static D: OnceLock<FeatureDictionary> = OnceLock::new();
    D.get_or_init(FeatureDictionary::default)
}

fn templates() -> &'static TemplateSet {
    static T: OnceLock<TemplateSet> = OnceLock::new();
    T.get_or_init(|| TemplateSet::bundled(dict()).unwrap())
}

fn pool() -> &'static [CrashRecord] {
    static P: OnceLock<Vec<CrashRecord>> = OnceLock::new();
    P.get_or_init(|| {
        let spec = SyntheticSpec {
            n_records: 400,
            seed: 77,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec, Exec::Sequential).unwrap().records
    })
}

fn any_record() -> impl Strategy<Value = CrashRecord> {
    (0..pool().len()).prop_map(|i| pool()[i].clone())
}

fn codec_case<C: LabelCodec + std::fmt::Debug>(i: usize) -> Result<(), TestCaseError> {
    let c = C::from_index(i % C::all().len()).unwrap();
    prop_assert_eq!(C::from_token(c.token()), Some(c));
    prop_assert_eq!(C::from_index(c.index()), Some(c));
    prop_assert_eq!(c.index(), i % C::all().len());
    Ok(())
}

pub fn codec_round_trips() -> Result<(), String> {
    run((0usize..1000, 0usize..3), |(i, t)| {
        codec_case::<InjuryBucket>(i)?;
        codec_case::<Severity>(i)?;
        codec_case::<AccidentType>(i)?;
        let task = Task::ALL[t];
        let k = i % task.n_classes();
        prop_assert_eq!(task.index_of_token(task.tokens()[k]), Some(k));
        let s = Severity::all()[i % 5];
        prop_assert_eq!(Severity::from_code(s.code()), Some(s));
        let a = AccidentType::all()[i % 14];
        prop_assert_eq!(AccidentType::from_abbr(a.abbr()), Some(a));
        Ok(())
    })
}

pub fn bucket_monotone() -> Result<(), String> {
    run((0u32..10_000, 0u32..10_000), |(a, b)| {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(bucket_injuries(lo) <= bucket_injuries(hi));
        prop_assert!(bucket_injuries(lo).index() <= bucket_injuries(hi).index());
        Ok(())
    })?;
    let hit: std::collections::BTreeSet<_> = (0..4).map(bucket_injuries).collect();
    if hit.len() == InjuryBucket::all().len() {
        Ok(())
    } else {
        Err("bucket_injuries is not onto".into())
    }
}

fn random_matrix() -> impl Strategy<Value = ConfusionMatrix> {
    (2usize..8).prop_flat_map(|k| {
        prop::collection::vec(0u64..60, k * k).prop_map(move |v| {
            let mut cm = ConfusionMatrix::empty((0..k).map(|i| format!("c{i}")).collect());
            for (i, n) in v.into_iter().enumerate() {
                cm.counts[i / k][i % k] = n;
            }
            cm.counts[0][0] += 1;
            cm
        })
    })
}

pub fn weighted_recall_is_accuracy() -> Result<(), String> {
    run(random_matrix(), |cm| {
        let m = metrics(&cm).unwrap();
        prop_assert!((m.recall - m.accuracy).abs() < 1e-12, "recall {} accuracy {}", m.recall, m.accuracy);
        prop_assert_eq!(m.accuracy, cm.trace() as f64 / cm.total() as f64);
        Ok(())
    })
}

pub fn constant_predictor_algebra() -> Result<(), String> {
    let strategy = (2usize..8).prop_flat_map(|k| (prop::collection::vec(0usize..200, k), 0..k));
    run(strategy, |(mut counts, c)| {
        counts[c] += 1;
        let k = counts.len();
        let truth: Vec<usize> = (0..k).flat_map(|i| std::iter::repeat_n(i, counts[i])).collect();
        let pred = vec![c; truth.len()];
        let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let m = metrics(&confusion(&truth, &pred, &names).unwrap()).unwrap();
        let p = counts[c] as f64 / truth.len() as f64;
        prop_assert!((m.accuracy - p).abs() < 1e-12);
        prop_assert!((m.precision - p * p).abs() < 1e-12);
        prop_assert!((m.f1 - 2.0 * p * p / (1.0 + p)).abs() < 1e-12);
        Ok(())
    })
}

/// Strings a dirty source table might hold: valid values in odd case and
/// spacing, missing markers, and junk.
fn raw_value() -> impl Strategy<Value = String> {
    let known: Vec<String> = dict()
        .fields()
        .iter()
        .flat_map(|f| f.allowed.iter().cloned())
        .collect();
    prop_oneof![
        prop::sample::select(known.clone()),
        prop::sample::select(known).prop_map(|v| format!("  {}  ", v.to_uppercase())),
        prop::sample::select(vec!["", "N/A", "unknown", "NULL", "-"]).prop_map(str::to_string),
        "[A-Za-z _-]{0,12}",
    ]
}

/// Overwrite one string leaf of the record (other than its identity) with `value`.
fn corrupt(r: &CrashRecord, pick: usize, value: &str) -> CrashRecord {
    fn leaves(v: &serde_json::Value, path: String, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(m) => m.iter().for_each(|(k, x)| leaves(x, format!("{path}/{k}"), out)),
            serde_json::Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| leaves(x, format!("{path}/{i}"), out)),
            serde_json::Value::String(_) => out.push(path),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(r).unwrap();
    let mut paths = Vec::new();
    leaves(&v, String::new(), &mut paths);
    paths.retain(|p| p != "/case_id" && !p.ends_with("crash_datetime") && !p.starts_with("/labels") && !p.ends_with("/factor"));
    if !paths.is_empty() {
        let p = &paths[pick % paths.len()];
        *v.pointer_mut(p).unwrap() = serde_json::Value::String(value.to_string());
    }
    serde_json::from_value(v).unwrap_or_else(|_| r.clone())
}

pub fn clean_idempotent() -> Result<(), String> {
    run((any_record(), prop::collection::vec((any::<usize>(), raw_value()), 1..4)), |(r, edits)| {
        let mut dirty = r;
        for (pick, value) in &edits {
            dirty = corrupt(&dirty, *pick, value);
        }
        let (once, _) = clean_record(dirty, dict());
        let (twice, unknown) = clean_record(once.clone(), dict());
        prop_assert_eq!(&once, &twice);
        prop_assert!(unknown.is_empty(), "second pass reported {:?}", unknown);
        Ok(())
    })
}

/// Categorical edits the what-if rewriter can apply, with their allowed values.
fn editable_fields() -> Vec<(String, Vec<String>)> {
    dict()
        .fields()
        .iter()
        .filter(|f| {
            matches!(f.kind, FieldKind::Categorical | FieldKind::Boolean)
                && (f.key.starts_with("fact.")
                    || ["lighting", "road_surface", "road_type", "contributing_factors", "work_zone", "intersection_related", "alcohol_involved", "drug_involved"]
                        .contains(&f.key.as_str()))
        })
        .map(|f| {
            let values = if f.kind == FieldKind::Boolean {
                vec!["true".to_string(), "false".to_string()]
            } else {
                f.allowed.clone()
            };
            (f.key.clone(), values)
        })
        .filter(|(_, v)| !v.is_empty())
        .collect()
}

pub fn no_label_leakage() -> Result<(), String> {
    let fields = editable_fields();
    let n = fields.len();
    run((any_record(), prop::collection::vec((0..n, any::<usize>()), 0..6)), |(mut r, edits)| {
        for (f, v) in edits {
            let (key, values) = &fields[f];
            set_field(&mut r, key, &values[v % values.len()]).unwrap();
        }
        let text = assemble_user_text(&render_paragraphs(&r, templates(), dict()).unwrap());
        let hits = scan_leakage(&text);
        prop_assert!(hits.is_empty(), "case {} leaks {:?}", r.case_id, hits);
        Ok(())
    })
}

fn rate() -> impl Strategy<Value = Rate> {
    prop_oneof![
        Just(Rate::All),
        (1u32..400).prop_map(|p| Rate::Multiple(p as f64 / 100.0)),
    ]
}

pub fn apply_idempotent_conserving() -> Result<(), String> {
    let strategy = (
        prop::sample::subsequence((0..pool().len()).collect::<Vec<_>>(), 1..60),
        0usize..3,
        rate(),
        any::<u64>(),
    );
    run(strategy, |(idx, f, rate, seed)| {
        let test: Vec<CrashRecord> = idx.iter().map(|&i| pool()[i].clone()).collect();
        let factor = Factor::ALL[f];
        let Ok(p) = plan(&test, factor, rate, seed) else {
            prop_assert!(test.iter().all(|r| factor.holds(r)));
            return Ok(());
        };
        let once = apply_records(&test, &p, dict(), Exec::Sequential).unwrap();
        let twice = apply_records(&once, &p, dict(), Exec::Sequential).unwrap();
        prop_assert_eq!(once.len(), test.len());
        prop_assert_eq!(&once, &twice);
        let adverse = once.iter().filter(|r| factor.holds(r)).count();
        prop_assert_eq!(adverse, p.adverse_total());
        prop_assert!(adverse >= test.iter().filter(|r| factor.holds(r)).count());
        for (a, b) in test.iter().zip(&once) {
            if !p.selected_case_ids.contains(&a.case_id) {
                prop_assert_eq!(a, b);
            }
        }
        Ok(())
    })
}

/// Over many seeds, the first record of a bucket of size n is kept about
/// k/n of the time (3-sigma binomial band).
pub fn resample_first_record_rate() -> Result<(), String> {
    let by_bucket = |b: InjuryBucket| pool().iter().filter(|r| r.labels.injury_bucket() == b).cloned().collect::<Vec<_>>();
    let mut test = Vec::new();
    let sizes = [40usize, 20, 10, 5];
    for (b, n) in InjuryBucket::all().iter().zip(sizes) {
        test.extend(by_bucket(*b).into_iter().take(n));
    }
    let k = *sizes.iter().min().unwrap();
    let firsts: Vec<String> = InjuryBucket::all()
        .iter()
        .map(|b| test.iter().find(|r| r.labels.injury_bucket() == *b).unwrap().case_id.clone())
        .collect();
    let mut hits = [0usize; 4];
    let trials = CASES as usize * 4;
    for seed in 0..trials as u64 {
        let kept = resample_uniform_injury(&test, seed).map_err(|e| e.to_string())?;
        for (h, id) in hits.iter_mut().zip(&firsts) {
            *h += usize::from(kept.iter().any(|r| &r.case_id == id));
        }
    }
    for (h, n) in hits.iter().zip(sizes) {
        let p = k as f64 / n as f64;
        let expected = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        if (*h as f64 - expected).abs() > 3.0 * sigma + 1e-9 {
            return Err(format!("bucket of {n}: first record kept {h}/{trials}, expected {expected:.0}"));
        }
    }
    Ok(())
}
