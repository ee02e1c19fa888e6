use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crashkit::baselines::ModelKind;
use crashkit::model::Task;
use crashkit::sampler::DEFAULT_SEED;
use crashkit::whatif::{Factor, Rate};

#[derive(Debug, Parser)]
#[command(name = "crashkit", version, about = "Crash-record textualization, baselines, evaluation and what-if analysis")]
pub struct Cli {
    /// Worker threads for data-parallel stages (0 = all cores, 1 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Seed for every randomized stage; echoed into each output manifest.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Feature dictionary file (defaults to the bundled one).
    #[arg(long, global = true)]
    pub dictionary: Option<PathBuf>,

    /// Prompt template file (defaults to the bundled one).
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Join and clean the source tables into records.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic corpus with planted effects.
    Synth(SynthArgs),
    /// Render records into prompt bundles.
    Textualize(TextualizeArgs),
    /// Partition records by crash month and build the uniform evaluation subset.
    Split(SplitArgs),
    /// Train classical baselines.
    TrainBaseline(TrainArgs),
    /// Query an external predictor for labels.
    PredictLlm(PredictArgs),
    /// Score predictions: confusion matrices, metrics and the average-rank table.
    Eval(EvalArgs),
    /// Counterfactual perturbations and prediction shifts.
    Whatif(WhatIfArgs),
    /// Convert state plane coordinates to latitude/longitude.
    Geo(GeoArgs),
    /// Write supervised fine-tuning examples.
    ExportSft(ExportSftArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Injury,
    Severity,
    AccidentType,
    All,
}

impl TaskArg {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskArg::Injury => vec![Task::Injury],
            TaskArg::Severity => vec![Task::Severity],
            TaskArg::AccidentType => vec![Task::AccidentType],
            TaskArg::All => Task::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SingleTask {
    Injury,
    Severity,
    AccidentType,
}

impl From<SingleTask> for Task {
    fn from(t: SingleTask) -> Task {
        match t {
            SingleTask::Injury => Task::Injury,
            SingleTask::Severity => Task::Severity,
            SingleTask::AccidentType => Task::AccidentType,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub crash: PathBuf,
    #[arg(long)]
    pub road: PathBuf,
    #[arg(long)]
    pub unit: PathBuf,
    #[arg(long)]
    pub person: Option<PathBuf>,
    /// Output directory (records.jsonl, ingest_report.json, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Minimum fraction of non-missing feature fields to keep a record.
    #[arg(long, default_value_t = crashkit::ingest::DEFAULT_MIN_COMPLETENESS)]
    pub min_completeness: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    /// Output directory (records.jsonl, segments.jsonl, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the corpus as source tables under `tables/`.
    #[arg(long)]
    pub tables: bool,
}

#[derive(Debug, Args)]
pub struct TextualizeArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub task: TaskArg,
    /// Output directory (prompts_<task>.jsonl, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResampleArg {
    UniformInjury,
    None,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Output directory (train/test/unassigned/eval_uniform .jsonl, split_manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = crashkit::sampler::DEFAULT_TEST_MONTHS)]
    pub test_months: Vec<u32>,
    #[arg(long, value_enum, default_value = "uniform-injury")]
    pub resample: ResampleArg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelArg {
    One(ModelKind),
    All,
}

impl ModelArg {
    pub fn kinds(&self) -> Vec<ModelKind> {
        match self {
            ModelArg::One(k) => vec![*k],
            ModelArg::All => ModelKind::ALL.to_vec(),
        }
    }
}

pub fn parse_model(s: &str) -> Result<ModelArg, String> {
    if s == "all" {
        return Ok(ModelArg::All);
    }
    s.parse().map(ModelArg::One).map_err(|e: crashkit::baselines::BaselineError| e.to_string())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Output directory (<model>_<task>.json, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
    /// forest, tree, adaboost, naive_bayes, logreg, gbdt or all.
    #[arg(long, value_parser = parse_model, default_value = "all")]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "all")]
    pub task: TaskArg,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub n_estimators: Option<usize>,
    /// Boosting rounds or gradient-descent epochs.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_features: Option<usize>,
    /// Grow forest trees on the full training set instead of bootstrap samples.
    #[arg(long)]
    pub no_bootstrap: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum)]
    pub task: SingleTask,
    /// Predictions file (JSON lines); a manifest is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Base URL of a predictor serving POST /predict.
    #[arg(long, conflicts_with = "mock", required_unless_present = "mock")]
    pub endpoint: Option<String>,
    /// Transcript of {case_id, label} lines to answer from instead of a server.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 60.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 30.0)]
    pub retry_ceiling_secs: f64,
    /// Accept a label token found anywhere in the reply.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Test records (the raw evaluation set).
    #[arg(long)]
    pub test: PathBuf,
    /// Uniform evaluation subset; when given, both subsets are reported.
    #[arg(long)]
    pub uniform: Option<PathBuf>,
    /// Directory of trained baseline models.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Predictions file, optionally named: `NAME=PATH`.
    #[arg(long)]
    pub predictions: Vec<String>,
    /// Output directory (report_<subset>.txt/.json, manifest.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorArg {
    One(Factor),
    All,
}

pub fn parse_factor(s: &str) -> Result<FactorArg, String> {
    if s == "all" {
        return Ok(FactorArg::All);
    }
    s.parse().map(FactorArg::One).map_err(|e: crashkit::whatif::WhatIfError| e.to_string())
}

pub fn parse_rate(s: &str) -> Result<Rate, String> {
    s.parse().map_err(|e: crashkit::whatif::WhatIfError| e.to_string())
}

#[derive(Debug, Args)]
pub struct WhatIfArgs {
    #[arg(long)]
    pub test: PathBuf,
    /// Directory of trained baseline models.
    #[arg(long)]
    pub models: PathBuf,
    /// Which trained model kind to score with.
    #[arg(long, default_value = "tree")]
    pub model: ModelKind,
    /// alcohol, icy_road, work_zone or all.
    #[arg(long, value_parser = parse_factor, default_value = "all")]
    pub factor: FactorArg,
    /// Conversion rates relative to the adverse count: e.g. 1,2,all or +100%.
    #[arg(long, value_parser = parse_rate, value_delimiter = ',', default_value = "1,2,all")]
    pub rates: Vec<Rate>,
    #[arg(long, value_enum, default_value = "all")]
    pub task: TaskArg,
    /// Also write regenerated prompts for the converted cases.
    #[arg(long)]
    pub emit_prompts: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GeoArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub easting: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub northing: f64,
    /// Also print a satellite tile URL (key from CRASHKIT_MAPS_API_KEY).
    #[arg(long)]
    pub tile: bool,
    #[arg(long, default_value_t = crashkit::geo::DEFAULT_TILE_SIZE)]
    pub size: u32,
    #[arg(long, default_value_t = crashkit::geo::DEFAULT_TILE_ZOOM)]
    pub zoom: u32,
    /// Write the point as JSON (with a manifest) instead of only printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportSftArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum)]
    pub task: SingleTask,
    /// SFT file (JSON lines); a manifest is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}
