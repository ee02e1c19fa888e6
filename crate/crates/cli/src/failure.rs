//! Errors surfaced to the user with a stable code and an exit status.

use std::fmt;
use std::path::Path;

use crashkit::baselines::BaselineError;
use crashkit::dictionary::DictionaryError;
use crashkit::eval::EvalError;
use crashkit::geo::GeoError;
use crashkit::ingest::IngestError;
use crashkit::llm::LlmError;
use crashkit::sampler::SamplerError;
use crashkit::textualize::TemplateError;
use crashkit::whatif::WhatIfError;

pub const EXIT_DOMAIN: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: &'static str,
    pub exit: u8,
    pub message: String,
}

impl Failure {
    pub fn domain(code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            exit: EXIT_DOMAIN,
            message: message.into(),
        }
    }

    pub fn usage(code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            exit: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Failure::domain("E_IO", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code, self.message)
    }
}

macro_rules! domain_from {
    ($($ty:ty => $code:literal),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::domain($code, e.to_string())
            }
        })*
    };
}

domain_from! {
    BaselineError => "E_BASELINE",
    DictionaryError => "E_DICTIONARY",
    EvalError => "E_EVAL",
    GeoError => "E_GEO",
    IngestError => "E_INGEST",
    LlmError => "E_LLM",
    SamplerError => "E_SAMPLER",
    TemplateError => "E_TEMPLATE",
    WhatIfError => "E_WHATIF",
}

pub type CliResult<T = ()> = Result<T, Failure>;
