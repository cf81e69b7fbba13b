//! Experiment runner for the `mfqueue` engine: configuration, seeding,
//! artifact files and suite orchestration.

pub mod config;
mod output;
pub mod suites;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use config::{parse_kernel_terms, validate_config, ExperimentConfig, KernelTerm, ModeSpec, Suite, Violation};
pub use suites::SuiteReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] mfqueue::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for hard failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub config_hash: String,
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl RunOutcome {
    pub fn any_failed(&self) -> bool {
        self.suites.iter().any(SuiteReport::failed)
    }

    /// 0 when every suite passed or was skipped, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.any_failed())
    }
}

/// Validates `config`, runs the selected suites in order and writes
/// `config.toml`, the suite artifacts and `run.json` into `config.out`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let violations = validate_config(config);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(Violation::to_string).collect();
        return Err(CliError::Usage(text.join("; ")));
    }
    match config.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("threads: {e}")))?;
            pool.install(|| run_validated(config))
        }
        None => run_validated(config),
    }
}

fn run_validated(config: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let hash = config.hash();
    let mut artifacts = output::Artifacts::new(Path::new(&config.out), hash.clone(), config.seed)?;
    artifacts.write_text("config.toml", config.to_toml().as_bytes())?;
    artifacts.take_written();
    let mut ctx = suites::Context { config, kernel: config.build_kernel()?, artifacts };
    let mut reports = Vec::new();
    for suite in config.selected_suites() {
        reports.push(ctx.run(suite)?);
    }
    let outcome = RunOutcome { config_hash: hash, seed: config.seed, suites: reports };
    ctx.artifacts.write_json("run.json", &outcome.suites)?;
    Ok(outcome)
}
