//! `crashkit` command-line driver.
//!
//! Exit status: 0 on success, 1 on a domain error, 2 on a usage error.
//! Errors go to stderr as `error[CODE]: message`.

mod args;
mod commands;
mod failure;

use std::process::ExitCode;

use clap::Parser;
use crashkit::Exec;

use args::{Cli, Command};
use commands::Ctx;
use failure::{CliResult, Failure, EXIT_USAGE};

fn exec_for(jobs: usize) -> CliResult<Exec> {
    if jobs == 1 {
        return Ok(Exec::Sequential);
    }
    if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage("E_ARGS", format!("--jobs: {e}")))?;
    }
    Ok(Exec::Parallel)
}

fn run(cli: Cli) -> CliResult {
    let exec = exec_for(cli.jobs)?;
    let ctx = Ctx::new(&cli, exec)?;
    match &cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Textualize(a) => commands::textualize(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::TrainBaseline(a) => commands::train_baseline(&ctx, a),
        Command::PredictLlm(a) => commands::predict_llm(&ctx, a),
        Command::Eval(a) => commands::run_eval(&ctx, a),
        Command::Whatif(a) => commands::run_whatif(&ctx, a),
        Command::Geo(a) => commands::run_geo(&ctx, a),
        Command::ExportSft(a) => commands::export_sft(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit)
        }
    }
}
