//! Acceptance report: one PASS/FAIL line per criterion, tolerances pinned.
//!
//! Runs as a plain binary (`harness = false`). Exits non-zero only on an
//! unexpected failure; criteria with a known, documented discrepancy are
//! still evaluated and printed as FAIL.

#[path = "../../core/tests/support/properties.rs"]
mod properties;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use crashkit::eval::{confusion, metrics, rank_columns, rank_table, Metrics, MetricRow};
use crashkit::geo::{dms, lcc_forward, lcc_inverse, GeoPoint, LccParams};
use crashkit::model::{CrashRecord, Task};
use crashkit::sampler::{generate_synthetic, SyntheticSpec};
use crashkit::whatif::{apply_records, plan, set_field, Factor, Rate, ShiftReport};
use crashkit::{Exec, FeatureDictionary};
use rand::{Rng, SeedableRng};

const METRIC_TOL: f64 = 0.001;
const ORIGIN_TOL_DEG: f64 = 1e-9;
const ROUND_TRIP_TOL_M: f64 = 1e-6;
const SCALE_TOL: f64 = 1e-9;
const GEO_POINTS: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    name: &'static str,
    limit: Duration,
    /// Documented discrepancy: reported as FAIL without failing the run.
    known_failure: bool,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion {
            name: "metrics algebra: constant predictor at prevalence 0.353",
            limit: Duration::from_secs(1),
            known_failure: false,
            check: metrics_algebra,
        },
        Criterion {
            name: "rank aggregation over the reference table",
            limit: Duration::from_secs(1),
            known_failure: true,
            check: rank_aggregation,
        },
        Criterion {
            name: "what-if cardinalities 63/779",
            limit: Duration::from_secs(1),
            known_failure: false,
            check: whatif_cardinalities,
        },
        Criterion {
            name: "geodesy: origin, round trip, scale at standard parallels",
            limit: Duration::from_secs(5),
            known_failure: false,
            check: geodesy,
        },
        Criterion {
            name: "pipeline determinism and planted icy->overturn shift",
            limit: Duration::from_secs(600),
            known_failure: false,
            check: pipeline_determinism,
        },
        Criterion {
            name: "property suites (>= 1000 cases each)",
            limit: Duration::from_secs(600),
            known_failure: false,
            check: property_suites,
        },
    ];
    let mut unexpected = 0;
    let mut known = 0;
    for c in &criteria {
        let start = Instant::now();
        let out = (c.check)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let pass = out.pass && in_time;
        let timing = if in_time {
            format!("{:.2}s", elapsed.as_secs_f64())
        } else {
            format!("{:.2}s, over the {:.0}s limit", elapsed.as_secs_f64(), c.limit.as_secs_f64())
        };
        let tag = match (pass, c.known_failure) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("[{tag}] {}: {} ({timing})", c.name, out.detail);
        if !pass {
            if c.known_failure {
                known += 1;
            } else {
                unexpected += 1;
            }
        }
    }
    println!(
        "[N/A] headline fine-tuned model scores: not reproducible without the proprietary crash data and fine-tuned model weights"
    );
    println!(
        "acceptance: {} passed, {known} known failure(s), {unexpected} unexpected failure(s)",
        criteria.len() - known - unexpected
    );
    if unexpected > 0 {
        std::process::exit(1);
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn metrics_algebra() -> Outcome {
    // 1000 cases, majority class 353, predictor always answers the majority.
    let counts = [353usize, 216, 216, 215];
    let truth: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    let pred = vec![0; truth.len()];
    let m = metrics(&confusion(&truth, &pred, &Task::Injury.class_names()).unwrap()).unwrap();
    let pass = within(m.accuracy, 0.353, METRIC_TOL)
        && m.precision >= 0.124 - METRIC_TOL
        && m.precision <= 0.125 + METRIC_TOL
        && within(m.recall, 0.353, METRIC_TOL)
        && within(m.f1, 0.184, METRIC_TOL);
    outcome(
        pass,
        format!(
            "accuracy {:.4}, precision {:.4}, recall {:.4}, f1 {:.4} (want 0.353 / 0.124-0.125 / 0.353 / 0.184, tol {METRIC_TOL})",
            m.accuracy, m.precision, m.recall, m.f1
        ),
    )
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn rank_aggregation() -> Outcome {
    let table: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(fixture("reference_table.json")).unwrap()).unwrap();
    let cols = rank_columns();
    let rows: Vec<MetricRow> = table["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            let cells: Vec<f64> = r["cells"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
            let mut row = MetricRow::new(r["model"].as_str().unwrap());
            for task in Task::ALL {
                let get = |metric| cells[cols.iter().position(|c| *c == (metric, task)).unwrap()];
                use crashkit::eval::MetricKind::*;
                row.set(
                    task,
                    Metrics {
                        accuracy: get(Accuracy),
                        precision: get(Precision),
                        recall: get(Recall),
                        f1: get(F1),
                    },
                );
            }
            row
        })
        .collect();
    let ranked = rank_table(&rows).unwrap();
    let score: BTreeMap<&str, f64> = ranked.iter().map(|r| (r.model.as_str(), r.score)).collect();
    let want = [("Llama-70B", 1.25), ("Llama-13B", 2.08), ("Llama-7B", 2.92)];
    let mut pass = true;
    let parts: Vec<String> = want
        .iter()
        .map(|(m, w)| {
            let got = score[m];
            // Published scores carry two decimals.
            let ok = (got * 100.0).round() == (w * 100.0_f64).round();
            pass &= ok;
            format!("{m} {got:.4} (want {w:.2}) {}", if ok { "ok" } else { "differs" })
        })
        .collect();
    outcome(pass, parts.join(", "))
}

fn whatif_cardinalities() -> Outcome {
    let dict = FeatureDictionary::default();
    let spec = SyntheticSpec {
        n_records: 842,
        seed: 5,
        ..SyntheticSpec::default()
    };
    let base = generate_synthetic(&spec, Exec::Sequential).unwrap().records;
    let mut details = Vec::new();
    let mut pass = true;
    for factor in Factor::ALL {
        let (key, clear) = match factor {
            Factor::Alcohol => ("alcohol_involved", "false"),
            Factor::IcyRoad => ("road_surface", "dry"),
            Factor::WorkZone => ("work_zone", "false"),
        };
        let test: Vec<CrashRecord> = base
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut r = r.clone();
                set_field(&mut r, key, clear).unwrap();
                if i < 63 {
                    factor.rewrite(&r, &dict).unwrap()
                } else {
                    r
                }
            })
            .collect();
        let mut got = Vec::new();
        for (rate, sel, total) in [(Rate::Multiple(1.0), 63, 126), (Rate::Multiple(2.0), 126, 189), (Rate::All, 779, 842)] {
            let p = plan(&test, factor, rate, 20220101).unwrap();
            let out = apply_records(&test, &p, &dict, Exec::Parallel).unwrap();
            let adverse = out.iter().filter(|r| factor.holds(r)).count();
            let ok = p.base_count == 63
                && p.complement_count == 779
                && p.selected_case_ids.len() == sel
                && p.adverse_total() == total
                && adverse == total
                && out.len() == 842;
            pass &= ok;
            got.push(format!("{}/{}", p.selected_case_ids.len(), adverse));
        }
        details.push(format!("{factor} {}", got.join(" ")));
    }
    outcome(pass, format!("selected/adverse at +100%, +200%, ALL: {} (want 63/126 126/189 779/842, n=842)", details.join("; ")))
}

/// Forward Lambert conformal conic (two standard parallels) on the ellipsoid,
/// written from the textbook formulas independently of the crate.
fn oracle_forward(p: &LccParams, lat: f64, lon: f64) -> (f64, f64) {
    let f = 1.0 / p.f_inv;
    let e2 = f * (2.0 - f);
    let e = e2.sqrt();
    let m = |phi: f64| phi.cos() / (1.0 - e2 * phi.sin().powi(2)).sqrt();
    let t = |phi: f64| {
        let s = e * phi.sin();
        (std::f64::consts::FRAC_PI_4 - phi / 2.0).tan() / ((1.0 - s) / (1.0 + s)).powf(e / 2.0)
    };
    let (p1, p2, p0) = (p.phi1.to_radians(), p.phi2.to_radians(), p.phi0.to_radians());
    let n = (m(p1).ln() - m(p2).ln()) / (t(p1).ln() - t(p2).ln());
    let big_f = m(p1) / (n * t(p1).powf(n));
    let rho = |phi: f64| p.a * big_f * t(phi).powf(n);
    let theta = n * (lon - p.lambda0).to_radians();
    let r = rho(lat.to_radians());
    (p.false_easting + r * theta.sin(), p.false_northing + rho(p0) - r * theta.cos())
}

fn geodesy() -> Outcome {
    let params = LccParams::default();
    let o = lcc_inverse(500_000.0, 0.0, &params).unwrap();
    let (lat0, lon0) = (dms(45.0, 20.0, 0.0), -dms(120.0, 30.0, 0.0));
    let origin_ok = within(o.lat, lat0, ORIGIN_TOL_DEG) && within(o.lon, lon0, ORIGIN_TOL_DEG);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20220101);
    let mut worst = 0.0f64;
    for _ in 0..GEO_POINTS {
        let (lat, lon) = (rng.random_range(45.0..49.0), rng.random_range(-125.0..-116.0));
        let (e, n) = oracle_forward(&params, lat, lon);
        let back = lcc_inverse(e, n, &params).unwrap();
        let (e2, n2) = oracle_forward(&params, back.lat, back.lon);
        worst = worst.max((e2 - e).hypot(n2 - n));
    }
    let trip_ok = worst < ROUND_TRIP_TOL_M;

    // Scale along the meridian: projected distance over ellipsoidal arc length.
    let f = 1.0 / params.f_inv;
    let e2 = f * (2.0 - f);
    let scale = |lat_deg: f64| {
        let phi = lat_deg.to_radians();
        let h = 1e-5;
        let at = |d: f64| lcc_forward(GeoPoint { lat: (phi + d).to_degrees(), lon: -120.5 }, &params).unwrap();
        let (a, b) = (at(-h), at(h));
        let meridian = params.a * (1.0 - e2) / (1.0 - e2 * phi.sin().powi(2)).powf(1.5);
        (b.0 - a.0).hypot(b.1 - a.1) / (meridian * 2.0 * h)
    };
    let (k1, k2) = (scale(params.phi1), scale(params.phi2));
    let scale_ok = within(k1, 1.0, SCALE_TOL) && within(k2, 1.0, SCALE_TOL);
    outcome(
        origin_ok && trip_ok && scale_ok,
        format!(
            "origin ({:.10}, {:.10}); worst round trip {worst:.2e} m over {GEO_POINTS} points (tol {ROUND_TRIP_TOL_M:e}); scale-1 at parallels {:.1e}, {:.1e} (tol {SCALE_TOL:e})",
            o.lat,
            o.lon,
            k1 - 1.0,
            k2 - 1.0
        ),
    )
}

fn crashkit(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crashkit"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`crashkit {}` exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn run_pipeline(root: &Path) -> Result<(), String> {
    let p = |rel: &str| root.join(rel).to_string_lossy().into_owned();
    crashkit(&["synth", "--n", "20000", "--out", &p("synth")])?;
    crashkit(&["textualize", "--records", &p("synth/records.jsonl"), "--out", &p("prompts")])?;
    crashkit(&["split", "--records", &p("synth/records.jsonl"), "--test-months", "1,6,12", "--out", &p("split")])?;
    crashkit(&["train-baseline", "--train", &p("split/train.jsonl"), "--model", "all", "--out", &p("models")])?;
    crashkit(&[
        "eval",
        "--test",
        &p("split/test.jsonl"),
        "--uniform",
        &p("split/eval_uniform.jsonl"),
        "--models",
        &p("models"),
        "--out",
        &p("eval"),
    ])?;
    crashkit(&[
        "whatif",
        "--test",
        &p("split/test.jsonl"),
        "--models",
        &p("models"),
        "--model",
        "tree",
        "--rates",
        "1,2,all",
        "--out",
        &p("whatif"),
    ])
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files_under(&path, out);
        } else {
            out.push(path);
        }
    }
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for root in [&a, &b] {
        if let Err(e) = run_pipeline(root) {
            return outcome(false, e);
        }
    }
    let mut fa = Vec::new();
    files_under(&a, &mut fa);
    fa.sort();
    let mut differing = Vec::new();
    for f in &fa {
        let rel = f.strip_prefix(&a).unwrap();
        if std::fs::read(f).ok() != std::fs::read(b.join(rel)).ok() {
            differing.push(rel.display().to_string());
        }
    }
    let mut fb = Vec::new();
    files_under(&b, &mut fb);
    let same_set = fa.len() == fb.len();

    let shift: ShiftReport =
        serde_json::from_str(&std::fs::read_to_string(a.join("whatif/icy_road/shift_accident_type_all.json")).unwrap()).unwrap();
    let overturn = shift.delta_of("OT").unwrap_or(0);
    outcome(
        differing.is_empty() && same_set && overturn > 0,
        format!(
            "{} output files, {} differing between runs; tree overturn delta under ALL-rate icy = {overturn:+}",
            fa.len(),
            differing.len()
        ),
    )
}

fn property_suites() -> Outcome {
    let mut failed = Vec::new();
    let all = properties::all();
    for (name, check) in &all {
        if let Err(e) = check() {
            failed.push(format!("{name}: {e}"));
        }
    }
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} suites x {} cases all hold", all.len(), properties::CASES)
        } else {
            failed.join("; ")
        },
    )
}
