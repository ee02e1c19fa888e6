//! Sequential vs rayon execution for the data-parallel stages.
//!
//! Build with `--no-default-features` to see the fallback alone; there both
//! modes run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use crashkit::baselines::logreg::loss_and_grad;
use crashkit::baselines::{encode, train, ModelKind, ModelSpec};
use crashkit::sampler::{generate_synthetic, SyntheticSpec};
use crashkit::textualize::{build_prompts, TemplateSet};
use crashkit::{CrashRecord, Exec, FeatureDictionary, Task};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn corpus(n: usize) -> Vec<CrashRecord> {
    let spec = SyntheticSpec {
        n_records: n,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec, Exec::Parallel).unwrap().records
}

fn bench(c: &mut Criterion) {
    let dict = FeatureDictionary::default();
    let templates = TemplateSet::bundled(&dict).unwrap();
    let records = corpus(4000);
    let ds = encode(&records, &dict, Task::AccidentType, Exec::Parallel);
    let n_classes = ds.class_names.len();
    let params = vec![0.01; (ds.x.n_cols + 1) * n_classes];
    let mut forest = ModelSpec::new(ModelKind::Forest);
    forest.n_estimators = 16;

    let mut g = c.benchmark_group("stages");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("synthesize", name), &exec, |b, &e| {
            let spec = SyntheticSpec {
                n_records: 4000,
                ..SyntheticSpec::default()
            };
            b.iter(|| black_box(generate_synthetic(&spec, e).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("build_prompts", name), &exec, |b, &e| {
            b.iter(|| black_box(build_prompts(&records, Task::Injury, &templates, &dict, e).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("encode", name), &exec, |b, &e| {
            b.iter(|| black_box(encode(&records, &dict, Task::Injury, e)))
        });
        g.bench_with_input(BenchmarkId::new("loss_and_grad", name), &exec, |b, &e| {
            b.iter(|| black_box(loss_and_grad(&params, &ds.x, &ds.y, n_classes, 1e-4, e)))
        });
        g.bench_with_input(BenchmarkId::new("forest_fit", name), &exec, |b, &e| {
            b.iter(|| black_box(train(&forest, &ds, Task::AccidentType, e).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
