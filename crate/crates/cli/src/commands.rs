//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crashkit::baselines::{self, FittedModel, ModelKind, ModelSpec};
use crashkit::eval::{self, EvalReport, TaskResult};
use crashkit::geo::{self, LccParams};
use crashkit::ingest::{self, IngestOptions, RoadSegment, SourceBundle};
use crashkit::llm::{HttpPredictor, LlmClient, MockPredictor, PredictRequest, PredictionRecord, Predictor, RetryPolicy};
use crashkit::manifest::{manifest_path_for, Manifest, MANIFEST_NAME};
use crashkit::model::{CrashRecord, Task};
use crashkit::sampler::{self, ResampleTarget, SplitManifest, SplitSpec, SyntheticSpec};
use crashkit::textualize::{self, TemplateSet};
use crashkit::whatif::{self, Factor, WhatIfError};
use crashkit::{Exec, FeatureDictionary};
use serde::Serialize;

use crate::args::*;
use crate::failure::{CliResult, Failure};

pub const MAPS_KEY_VAR: &str = "CRASHKIT_MAPS_API_KEY";
pub const ENDPOINT_TOKEN_VAR: &str = "CRASHKIT_ENDPOINT_TOKEN";

pub struct Ctx {
    pub exec: Exec,
    pub seed: u64,
    pub dict: FeatureDictionary,
    templates_path: Option<PathBuf>,
    dictionary_path: Option<PathBuf>,
}

impl Ctx {
    pub fn new(cli: &Cli, exec: Exec) -> CliResult<Ctx> {
        if let Some(p) = &cli.dictionary {
            require_file(p)?;
        }
        if let Some(p) = &cli.templates {
            require_file(p)?;
        }
        let dict = match &cli.dictionary {
            Some(p) => FeatureDictionary::load(p)?,
            None => FeatureDictionary::default(),
        };
        Ok(Ctx {
            exec,
            seed: cli.seed,
            dict,
            templates_path: cli.templates.clone(),
            dictionary_path: cli.dictionary.clone(),
        })
    }

    fn templates(&self) -> CliResult<TemplateSet> {
        Ok(match &self.templates_path {
            Some(p) => TemplateSet::load(p, &self.dict)?,
            None => TemplateSet::bundled(&self.dict)?,
        })
    }

    fn manifest(&self, subcommand: &str, templates: Option<&TemplateSet>) -> CliResult<Manifest> {
        let mut m = Manifest::new(subcommand)
            .seed(self.seed)
            .hashes(templates.map(TemplateSet::hash), Some(self.dict.hash()));
        for p in self.dictionary_path.iter().chain(&self.templates_path) {
            m.add_input(p).map_err(|e| Failure::io(p, e))?;
        }
        Ok(m)
    }
}

pub fn require_file(path: &Path) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage("E_PATH", format!("input file {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage("E_PATH", format!("input directory {} does not exist", path.display())))
    }
}

fn require_out_parent(path: &Path) -> CliResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(Failure::usage(
            "E_PATH",
            format!("output directory {} does not exist", p.display()),
        )),
        _ => Ok(()),
    }
}

fn create_dir(path: &Path) -> CliResult {
    if path.is_file() {
        return Err(Failure::usage("E_PATH", format!("{} is a file, expected a directory", path.display())));
    }
    std::fs::create_dir_all(path).map_err(|e| Failure::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::domain("E_IO", e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

fn read_records(path: &Path) -> CliResult<Vec<CrashRecord>> {
    Ok(ingest::read_jsonl(path)?)
}

fn add_input(m: &mut Manifest, path: &Path) -> CliResult {
    m.add_input(path).map_err(|e| Failure::io(path, e))
}

fn finish_dir(mut m: Manifest, dir: &Path) -> CliResult {
    m.add_output_dir(dir).map_err(|e| Failure::io(dir, e))?;
    let path = dir.join(MANIFEST_NAME);
    m.write(&path).map_err(|e| Failure::io(&path, e))
}

fn finish_file(mut m: Manifest, file: &Path) -> CliResult {
    m.add_output(file).map_err(|e| Failure::io(file, e))?;
    let path = manifest_path_for(file);
    m.write(&path).map_err(|e| Failure::io(&path, e))
}

pub fn ingest(ctx: &Ctx, a: &IngestArgs) -> CliResult {
    let inputs: Vec<&PathBuf> = [&a.crash, &a.road, &a.unit].into_iter().chain(&a.person).collect();
    for p in &inputs {
        require_file(p)?;
    }
    if !a.delimiter.is_ascii() {
        return Err(Failure::usage("E_ARGS", "delimiter must be a single ASCII character"));
    }
    if !(0.0..=1.0).contains(&a.min_completeness) {
        return Err(Failure::usage("E_ARGS", "min-completeness must lie in [0, 1]"));
    }
    create_dir(&a.out)?;
    let bundle = SourceBundle {
        crash_table: a.crash.clone(),
        road_table: a.road.clone(),
        unit_table: a.unit.clone(),
        person_table: a.person.clone(),
    };
    let opts = IngestOptions {
        delimiter: a.delimiter as u8,
        min_completeness: a.min_completeness,
        exec: ctx.exec,
    };
    let (records, report) = ingest::ingest(&bundle, &ctx.dict, &opts)?;
    log::info!(
        "built {} records, dropped {} ({} malformed lines)",
        report.records_built,
        report.records_dropped,
        report.malformed_lines.values().map(Vec::len).sum::<usize>()
    );
    ingest::write_jsonl(&a.out.join("records.jsonl"), &records)?;
    write_json(&a.out.join("ingest_report.json"), &report)?;
    let mut m = ctx
        .manifest("ingest", None)?
        .param("delimiter", a.delimiter.to_string())
        .param("min_completeness", a.min_completeness);
    for p in inputs {
        add_input(&mut m, p)?;
    }
    finish_dir(m, &a.out)
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> CliResult {
    let spec = SyntheticSpec {
        n_records: a.n,
        seed: ctx.seed,
        ..SyntheticSpec::default()
    };
    spec.validate()?;
    create_dir(&a.out)?;
    let corpus = sampler::generate_synthetic(&spec, ctx.exec)?;
    ingest::write_jsonl(&a.out.join("records.jsonl"), &corpus.records)?;
    ingest::write_jsonl::<RoadSegment>(&a.out.join("segments.jsonl"), &corpus.segments)?;
    if a.tables {
        ingest::export_tables(&corpus.records, &corpus.segments, &a.out.join("tables"))?;
    }
    let m = ctx
        .manifest("synth", None)?
        .param("n_records", a.n)
        .param("effects", &spec.effects)
        .param("corpus_hash", corpus.hash());
    finish_dir(m, &a.out)
}

pub fn textualize(ctx: &Ctx, a: &TextualizeArgs) -> CliResult {
    require_file(&a.records)?;
    let templates = ctx.templates()?;
    create_dir(&a.out)?;
    let records = read_records(&a.records)?;
    for task in a.task.tasks() {
        let bundles = textualize::build_prompts(&records, task, &templates, &ctx.dict, ctx.exec)?;
        for b in &bundles {
            let hits = textualize::scan_leakage(&b.user_text);
            if !hits.is_empty() {
                return Err(Failure::domain(
                    "E_LEAKAGE",
                    format!("case {}: user text contains label phrases {hits:?}", b.case_id),
                ));
            }
        }
        let outliers = textualize::word_budget_outliers(&bundles);
        if !outliers.is_empty() {
            log::warn!("{task}: {} paragraphs fall outside the word budget", outliers.len());
        }
        ingest::write_jsonl(&a.out.join(format!("prompts_{task}.jsonl")), &bundles)?;
    }
    let mut m = ctx.manifest("textualize", Some(&templates))?;
    add_input(&mut m, &a.records)?;
    finish_dir(m, &a.out)
}

pub fn export_sft(ctx: &Ctx, a: &ExportSftArgs) -> CliResult {
    require_file(&a.records)?;
    require_out_parent(&a.out)?;
    let templates = ctx.templates()?;
    let records = read_records(&a.records)?;
    let task = Task::from(a.task);
    let n = textualize::export_sft(&records, task, &templates, &ctx.dict, &a.out, ctx.exec)?;
    log::info!("wrote {n} {task} examples");
    let mut m = ctx.manifest("export-sft", Some(&templates))?.param("task", task);
    add_input(&mut m, &a.records)?;
    finish_file(m, &a.out)
}

pub fn split(ctx: &Ctx, a: &SplitArgs) -> CliResult {
    require_file(&a.records)?;
    let spec = SplitSpec {
        test_months: a.test_months.iter().copied().collect(),
        seed: ctx.seed,
        resample: match a.resample {
            ResampleArg::UniformInjury => ResampleTarget::UniformInjury,
            ResampleArg::None => ResampleTarget::None,
        },
    };
    spec.validate()?;
    create_dir(&a.out)?;
    let records = read_records(&a.records)?;
    let parts = sampler::split(&records, &spec)?;
    let uniform = match spec.resample {
        ResampleTarget::UniformInjury => Some(sampler::resample_uniform_injury(&parts.test, spec.seed)?),
        ResampleTarget::None => None,
    };
    ingest::write_jsonl(&a.out.join("train.jsonl"), &parts.train)?;
    ingest::write_jsonl(&a.out.join("test.jsonl"), &parts.test)?;
    ingest::write_jsonl(&a.out.join("unassigned.jsonl"), &parts.unassigned)?;
    if let Some(u) = &uniform {
        ingest::write_jsonl(&a.out.join("eval_uniform.jsonl"), u)?;
    }
    write_json(
        &a.out.join("split_manifest.json"),
        &SplitManifest::new(&spec, &parts, uniform.as_deref()),
    )?;
    log::info!(
        "train {} / test {} / unassigned {}",
        parts.train.len(),
        parts.test.len(),
        parts.unassigned.len()
    );
    let mut m = ctx
        .manifest("split", None)?
        .param("test_months", &spec.test_months)
        .param("resample", spec.resample);
    add_input(&mut m, &a.records)?;
    finish_dir(m, &a.out)
}

pub fn model_file(kind: ModelKind, task: Task) -> String {
    format!("{kind}_{task}.json")
}

pub fn train_baseline(ctx: &Ctx, a: &TrainArgs) -> CliResult {
    require_file(&a.train)?;
    let specs: Vec<ModelSpec> = a
        .model
        .kinds()
        .into_iter()
        .map(|kind| {
            let d = ModelSpec::new(kind);
            ModelSpec {
                max_depth: a.max_depth.unwrap_or(d.max_depth),
                n_estimators: a.n_estimators.unwrap_or(d.n_estimators),
                rounds: a.rounds.unwrap_or(d.rounds),
                learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
                l2: a.l2.unwrap_or(d.l2),
                max_features: a.max_features.or(d.max_features),
                bootstrap: d.bootstrap && !a.no_bootstrap,
                seed: ctx.seed,
                ..d
            }
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }
    create_dir(&a.out)?;
    let records = read_records(&a.train)?;
    if records.is_empty() {
        return Err(Failure::domain("E_BASELINE", "training set is empty"));
    }
    let encoder = baselines::Encoder::fit(&records, &ctx.dict);
    for task in a.task.tasks() {
        let ds = baselines::encode_with(&encoder, &records, task, ctx.exec);
        for spec in &specs {
            let model = baselines::train(spec, &ds, task, ctx.exec)?;
            if model.degenerate {
                log::warn!("{} / {task}: degenerate training labels, constant model", spec.kind);
            }
            let path = a.out.join(model_file(spec.kind, task));
            model.save(&path)?;
            log::info!("trained {} / {task}", spec.kind);
        }
    }
    let mut m = ctx.manifest("train-baseline", None)?.param("specs", &specs);
    add_input(&mut m, &a.train)?;
    finish_dir(m, &a.out)
}

pub fn predict_llm(ctx: &Ctx, a: &PredictArgs) -> CliResult {
    require_file(&a.records)?;
    if let Some(p) = &a.mock {
        require_file(p)?;
    }
    require_out_parent(&a.out)?;
    if !(a.timeout_secs > 0.0 && a.timeout_secs.is_finite()) || !(a.retry_ceiling_secs >= 0.0) {
        return Err(Failure::usage("E_ARGS", "timeouts must be positive"));
    }
    let templates = ctx.templates()?;
    let task = Task::from(a.task);
    let records = read_records(&a.records)?;
    let requests: Vec<PredictRequest> = textualize::build_prompts(&records, task, &templates, &ctx.dict, ctx.exec)?
        .iter()
        .map(PredictRequest::from)
        .collect();
    let retry = RetryPolicy {
        max_retries: a.max_retries,
        ceiling: Duration::from_secs_f64(a.retry_ceiling_secs),
        ..RetryPolicy::default()
    };
    let result = match (&a.endpoint, &a.mock) {
        (Some(url), _) => {
            url::Url::parse(url).map_err(|e| Failure::usage("E_ARGS", format!("endpoint {url:?}: {e}")))?;
            let token = std::env::var(ENDPOINT_TOKEN_VAR).ok().filter(|t| !t.is_empty());
            let p = HttpPredictor::new(url, Duration::from_secs_f64(a.timeout_secs))?.with_token(token);
            run_batch(p, retry, a, &requests)
        }
        (None, Some(path)) => {
            let p = MockPredictor::load(path).map_err(|e| Failure::io(path, e))?;
            run_batch(p, retry, a, &requests)
        }
        (None, None) => return Err(Failure::usage("E_ARGS", "one of --endpoint or --mock is required")),
    };
    for e in &result.errors {
        log::warn!("case {}: {}", e.case_id, e.error);
    }
    log::info!(
        "{} of {} cases labelled, {} retries",
        requests.len() - result.errors.len(),
        requests.len(),
        result.retries
    );
    ingest::write_jsonl(&a.out, &result.records(&requests))?;
    let mut m = ctx
        .manifest("predict-llm", Some(&templates))?
        .param("task", task)
        .param("endpoint", a.endpoint.as_deref().unwrap_or("mock"))
        .param("lenient", a.lenient)
        .param("failed_cases", result.errors.len());
    add_input(&mut m, &a.records)?;
    if let Some(p) = &a.mock {
        add_input(&mut m, p)?;
    }
    finish_file(m, &a.out)?;
    if !requests.is_empty() && result.errors.len() == requests.len() {
        return Err(Failure::domain("E_LLM", "every request failed"));
    }
    Ok(())
}

fn run_batch<P: Predictor>(
    p: P,
    retry: RetryPolicy,
    a: &PredictArgs,
    requests: &[PredictRequest],
) -> crashkit::llm::BatchResult {
    let mut client = LlmClient::new(p, retry);
    client.lenient = a.lenient;
    client.predict_batch(requests, a.max_in_flight)
}

/// Model files in a directory, sorted by name.
fn model_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Failure::io(dir, e))? {
        let path = entry.map_err(|e| Failure::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".json") && !name.ends_with("manifest.json") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

struct PredictionSource {
    name: String,
    by_task: BTreeMap<Task, HashMap<String, Option<String>>>,
}

fn load_predictions(spec: &str) -> CliResult<(PredictionSource, PathBuf)> {
    let (name, path) = match spec.split_once('=') {
        Some((n, p)) if !n.is_empty() => (n.to_string(), PathBuf::from(p)),
        _ => {
            let p = PathBuf::from(spec);
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (stem, p)
        }
    };
    require_file(&path)?;
    let lines: Vec<PredictionRecord> = ingest::read_jsonl(&path)?;
    let mut by_task: BTreeMap<Task, HashMap<String, Option<String>>> = BTreeMap::new();
    for l in lines {
        by_task.entry(l.task).or_default().insert(l.case_id, l.label);
    }
    Ok((PredictionSource { name, by_task }, path))
}

/// Score one predictions file on an evaluation set. Tasks whose predictions
/// miss the set entirely are skipped unless `required`.
fn score_predictions(src: &PredictionSource, records: &[CrashRecord], required: bool) -> CliResult<Vec<TaskResult>> {
    let mut out = Vec::new();
    for (task, labels) in &src.by_task {
        let covered = records.iter().filter(|r| labels.contains_key(&r.case_id)).count();
        if covered == 0 {
            if required {
                return Err(Failure::domain(
                    "E_EVAL",
                    format!("{} / {task}: predictions cover none of the evaluation cases", src.name),
                ));
            }
            continue;
        }
        let mut truth = Vec::with_capacity(records.len());
        let mut pred = Vec::with_capacity(records.len());
        for r in records {
            let token = labels.get(&r.case_id).and_then(Option::as_deref).ok_or_else(|| {
                Failure::domain(
                    "E_EVAL",
                    format!("{} / {task}: no valid prediction for case {}", src.name, r.case_id),
                )
            })?;
            let idx = task
                .index_of_token(token)
                .ok_or_else(|| Failure::domain("E_EVAL", format!("{}: {token:?} is not a {task} token", src.name)))?;
            truth.push(task.label_index(&r.labels));
            pred.push(idx);
        }
        out.push(task_result(src.name.clone(), *task, &truth, &pred)?);
    }
    Ok(out)
}

fn task_result(model: String, task: Task, truth: &[usize], pred: &[usize]) -> CliResult<TaskResult> {
    let confusion = eval::confusion(truth, pred, &task.class_names())?;
    let metrics = eval::metrics(&confusion)?;
    Ok(TaskResult {
        model,
        task,
        confusion,
        metrics,
    })
}

pub fn run_eval(ctx: &Ctx, a: &EvalArgs) -> CliResult {
    require_file(&a.test)?;
    if let Some(u) = &a.uniform {
        require_file(u)?;
    }
    if let Some(d) = &a.models {
        require_dir(d)?;
    }
    if a.models.is_none() && a.predictions.is_empty() {
        return Err(Failure::usage("E_ARGS", "nothing to evaluate: give --models and/or --predictions"));
    }
    let mut sources = Vec::new();
    let mut inputs = vec![a.test.clone()];
    inputs.extend(a.uniform.clone());
    for spec in &a.predictions {
        let (src, path) = load_predictions(spec)?;
        sources.push(src);
        inputs.push(path);
    }
    let models: Vec<(PathBuf, FittedModel)> = match &a.models {
        Some(d) => model_files(d)?
            .into_iter()
            .map(|p| FittedModel::load(&p).map(|m| (p, m)))
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    inputs.extend(models.iter().map(|(p, _)| p.clone()));
    create_dir(&a.out)?;

    let mut subsets = vec![("raw", read_records(&a.test)?)];
    if let Some(u) = &a.uniform {
        subsets.push(("uniform", read_records(u)?));
    }
    for (subset, records) in &subsets {
        if records.is_empty() {
            return Err(Failure::domain("E_EVAL", format!("{subset} evaluation set is empty")));
        }
        let mut results = Vec::new();
        for (_, model) in &models {
            let pred = model.predict_records(records, ctx.exec)?;
            let truth: Vec<usize> = records.iter().map(|r| model.task.label_index(&r.labels)).collect();
            results.push(task_result(model.spec.kind.report_label().to_string(), model.task, &truth, &pred)?);
        }
        for src in &sources {
            results.extend(score_predictions(src, records, *subset == "raw")?);
        }
        let report = EvalReport::build(*subset, records.len(), results);
        write_text(&a.out.join(format!("report_{subset}.txt")), &report.render_text())?;
        write_json(&a.out.join(format!("report_{subset}.json")), &report)?;
    }
    let mut m = ctx.manifest("eval", None)?;
    for p in &inputs {
        add_input(&mut m, p)?;
    }
    finish_dir(m, &a.out)
}

pub fn run_whatif(ctx: &Ctx, a: &WhatIfArgs) -> CliResult {
    require_file(&a.test)?;
    require_dir(&a.models)?;
    let tasks = a.task.tasks();
    let mut model_paths = Vec::new();
    for &task in &tasks {
        let p = a.models.join(model_file(a.model, task));
        require_file(&p)?;
        model_paths.push(p);
    }
    if a.rates.is_empty() {
        return Err(Failure::usage("E_ARGS", "at least one rate is required"));
    }
    let templates = if a.emit_prompts { Some(ctx.templates()?) } else { None };
    let models: Vec<FittedModel> = model_paths.iter().map(|p| FittedModel::load(p)).collect::<Result<_, _>>()?;
    create_dir(&a.out)?;
    let test = read_records(&a.test)?;
    let before: Vec<Vec<usize>> = models
        .iter()
        .map(|m| m.predict_records(&test, ctx.exec))
        .collect::<Result<_, _>>()?;

    let factors = match &a.factor {
        FactorArg::One(f) => vec![*f],
        FactorArg::All => Factor::ALL.to_vec(),
    };
    let mut summary = String::new();
    let _ = writeln!(summary, "What-if shifts ({} model, {} test cases)", a.model, test.len());
    for factor in factors {
        let dir = a.out.join(factor.as_str());
        for &rate in &a.rates {
            let plan = match whatif::plan(&test, factor, rate, ctx.seed) {
                Ok(p) => p,
                Err(WhatIfError::EmptyComplement(f)) if a.factor == FactorArg::All => {
                    log::warn!("{f}: every test case already has the condition; skipped");
                    let _ = writeln!(summary, "\n[{factor} {}] skipped: empty complement", rate.label());
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            create_dir(&dir)?;
            let slug = rate.slug();
            let perturbed = whatif::apply_records(&test, &plan, &ctx.dict, ctx.exec)?;
            if perturbed.len() != test.len() {
                return Err(Failure::domain("E_WHATIF", "perturbed set changed size"));
            }
            write_json(&dir.join(format!("plan_{slug}.json")), &plan)?;
            if let Some(t) = &templates {
                let ids: HashSet<&str> = plan.selected_case_ids.iter().map(String::as_str).collect();
                let selected: Vec<&CrashRecord> = perturbed.iter().filter(|r| ids.contains(r.case_id.as_str())).collect();
                let mut lines = Vec::with_capacity(selected.len());
                for r in selected {
                    let paras = textualize::render_paragraphs(r, t, &ctx.dict)?;
                    lines.push(serde_json::json!({
                        "case_id": r.case_id,
                        "user": textualize::assemble_user_text(&paras),
                    }));
                }
                ingest::write_jsonl(&dir.join(format!("prompts_{slug}.jsonl")), &lines)?;
            }
            let _ = writeln!(
                summary,
                "\n[{factor} {}] adverse {} -> {} of {}",
                rate.label(),
                plan.base_count,
                plan.adverse_total(),
                test.len()
            );
            for (model, base) in models.iter().zip(&before) {
                let after = model.predict_records(&perturbed, ctx.exec)?;
                let report = whatif::shift_report(base, &after, &model.class_names)?;
                let task = model.task;
                write_json(&dir.join(format!("shift_{task}_{slug}.json")), &report)?;
                write_text(&dir.join(format!("plot_{task}_{slug}.csv")), &report.plot_csv())?;
                let deltas: Vec<String> = report
                    .classes
                    .iter()
                    .map(|c| format!("{} {:+}", c.class, c.delta))
                    .collect();
                let _ = writeln!(summary, "  {task:<14} {}", deltas.join(", "));
            }
        }
    }
    write_text(&a.out.join("summary.txt"), &summary)?;
    let mut m = ctx
        .manifest("whatif", templates.as_ref())?
        .param("model", a.model)
        .param("rates", a.rates.iter().map(|r| r.label()).collect::<Vec<_>>());
    add_input(&mut m, &a.test)?;
    for p in &model_paths {
        add_input(&mut m, p)?;
    }
    finish_dir(m, &a.out)
}

pub fn run_geo(ctx: &Ctx, a: &GeoArgs) -> CliResult {
    if let Some(out) = &a.out {
        require_out_parent(out)?;
    }
    let params = LccParams::default();
    let point = geo::lcc_inverse(a.easting, a.northing, &params)?;
    println!("{:.9},{:.9}", point.lat, point.lon);
    if a.tile {
        let key = std::env::var(MAPS_KEY_VAR)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Failure::domain("E_GEO_KEY", format!("{MAPS_KEY_VAR} is not set")))?;
        println!("{}", geo::tile_url(point, a.size, a.zoom, &key)?);
    }
    if let Some(out) = &a.out {
        write_json(
            out,
            &serde_json::json!({
                "easting": a.easting,
                "northing": a.northing,
                "lat": point.lat,
                "lon": point.lon,
                "params": params,
            }),
        )?;
        finish_file(ctx.manifest("geo", None)?, out)?;
    }
    Ok(())
}
