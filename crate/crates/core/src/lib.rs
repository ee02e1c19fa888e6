//! Crash-record toolkit: ingest and clean source tables, textualize records
//! into prompts, train and score classical baselines, query external LLM
//! predictors, and run counterfactual what-if perturbations.

pub mod baselines;
pub mod dictionary;
pub mod eval;
pub mod exec;
pub mod geo;
pub mod ingest;
pub mod llm;
pub mod manifest;
pub mod model;
pub mod sampler;
pub mod textualize;
pub mod whatif;

pub use dictionary::FeatureDictionary;
pub use exec::Exec;
pub use model::{AccidentType, CrashRecord, InjuryBucket, LabelCodec, Labels, Severity, Task};
