use crashkit::dictionary::FeatureDictionary;
use crashkit::ingest::{self, IngestOptions};
use crashkit::model::{AccidentType, CrashRecord};
use crashkit::sampler::{generate_synthetic, resample_uniform_injury, split, SplitSpec, SyntheticSpec};
use crashkit::Exec;

fn corpus(n: usize) -> Vec<CrashRecord> {
    let spec = SyntheticSpec {
        n_records: n,
        ..Default::default()
    };
    generate_synthetic(&spec, Exec::default()).unwrap().records
}

/// Empirical P(type | surface) straight from the generated records.
fn rate(records: &[CrashRecord], surface: &str, at: AccidentType) -> (f64, usize) {
    let group: Vec<&CrashRecord> = records
        .iter()
        .filter(|r| r.infrastructure.road_surface.as_deref() == Some(surface))
        .collect();
    let hits = group.iter().filter(|r| r.labels.accident_type == at).count();
    (hits as f64 / group.len() as f64, group.len())
}

#[test]
fn planted_icy_overturn_ratio() {
    let records = corpus(20_000);
    let (icy, n_icy) = rate(&records, "icy", AccidentType::Overturn);
    let (dry, n_dry) = rate(&records, "dry", AccidentType::Overturn);
    let ratio = icy / dry;
    println!("icy {icy:.4} (n={n_icy}) dry {dry:.4} (n={n_dry}) ratio {ratio:.3}");
    assert!((2.5..=3.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn every_record_validates() {
    let d = FeatureDictionary::default();
    for r in corpus(2_000) {
        let problems = ingest::validate_record(&r, &d);
        assert!(problems.is_empty(), "{}: {problems:?}", r.case_id);
    }
}

#[test]
fn split_and_resample_on_corpus() {
    let records = corpus(5_000);
    let s = split(&records, &SplitSpec::default()).unwrap();
    assert_eq!(s.train.len() + s.test.len() + s.unassigned.len(), records.len());
    assert!(!s.unassigned.is_empty());
    let frac = s.test.len() as f64 / records.len() as f64;
    assert!((0.2..0.3).contains(&frac), "{frac}");
    let sub = resample_uniform_injury(&s.test, 1).unwrap();
    assert_eq!(sub.len() % 4, 0);
}

#[test]
fn export_and_reingest_round_trips() {
    let d = FeatureDictionary::default();
    let spec = SyntheticSpec {
        n_records: 500,
        ..Default::default()
    };
    let corpus = generate_synthetic(&spec, Exec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bundle = ingest::export_tables(&corpus.records, &corpus.segments, dir.path()).unwrap();
    let opts = IngestOptions {
        min_completeness: 0.0,
        ..Default::default()
    };
    let (back, report) = ingest::ingest(&bundle, &d, &opts).unwrap();
    assert_eq!(report.records_dropped, 0, "{report:?}");
    assert!(report.unmatched_road.is_empty());
    assert!(report.unknown_categories.is_empty());
    assert_eq!(back.len(), corpus.records.len());
    for (a, b) in corpus.records.iter().zip(&back) {
        assert_eq!(a, b);
    }
}
