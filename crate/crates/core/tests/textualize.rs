use std::path::PathBuf;

use crashkit::model::{CrashRecord, Task};
use crashkit::textualize::{
    build_prompt, export_sft, read_sft, render_paragraphs, split_user_text, word_count, SftExample, TemplateSet,
};
use crashkit::{Exec, FeatureDictionary};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn fixture() -> CrashRecord {
    serde_json::from_str(include_str!("fixtures/record.json")).unwrap()
}

/// Compare against a checked-in file; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

#[test]
fn fixture_paragraphs_match_golden() {
    let d = FeatureDictionary::default();
    let t = TemplateSet::bundled(&d).unwrap();
    let paras = render_paragraphs(&fixture(), &t, &d).unwrap();
    check_golden("fixture_paragraphs.txt", &(paras.join("\n\n") + "\n"));
    for p in &paras {
        let n = word_count(p);
        assert!((60..=160).contains(&n), "{n} words: {p}");
    }
}

#[test]
fn fixture_sft_matches_golden() {
    let d = FeatureDictionary::default();
    let t = TemplateSet::bundled(&d).unwrap();
    let base = fixture();
    let mut records = Vec::new();
    for (i, id) in ["C3", "A1", "B2"].iter().enumerate() {
        let mut r = base.clone();
        r.case_id = id.to_string();
        r.labels.injured_count = i as u32;
        records.push(r);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("injury.jsonl");
    assert_eq!(export_sft(&records, Task::Injury, &t, &d, &path, Exec::Sequential).unwrap(), 3);
    let text = std::fs::read_to_string(&path).unwrap();
    check_golden("fixture_injury.jsonl", &text);

    let back = read_sft(&path).unwrap();
    let ids: Vec<&str> = back.iter().map(|e| e.case_id.as_str()).collect();
    assert_eq!(ids, ["A1", "B2", "C3"]);
    for e in &back {
        let r = records.iter().find(|r| r.case_id == e.case_id).unwrap();
        assert_eq!(*e, SftExample::from(build_prompt(r, Task::Injury, &t, &d).unwrap()));
    }
}

#[test]
fn empty_export_writes_empty_file() {
    let d = FeatureDictionary::default();
    let t = TemplateSet::bundled(&d).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    assert_eq!(export_sft(&[], Task::Severity, &t, &d, &path, Exec::default()).unwrap(), 0);
    assert_eq!(std::fs::read(&path).unwrap().len(), 0);
}

#[test]
fn rendering_is_deterministic_across_exec_modes() {
    let d = FeatureDictionary::default();
    let t = TemplateSet::bundled(&d).unwrap();
    let records = vec![fixture(); 64];
    let a = crashkit::textualize::build_prompts(&records, Task::AccidentType, &t, &d, Exec::Sequential).unwrap();
    let b = crashkit::textualize::build_prompts(&records, Task::AccidentType, &t, &d, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(split_user_text(&a[0].user_text).is_some());
}
