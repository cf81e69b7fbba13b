use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfq_cli::{parse_kernel_terms, run, CliError, ExperimentConfig, Suite};

/// Mean-field GI/GI/1 simulation and verification experiments.
#[derive(Parser)]
#[command(name = "mfq", version)]
struct Cli {
    /// TOML experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Kernel ids joined by `+`, e.g. `const` or `const+age-service`.
    #[arg(long)]
    kernel: Option<String>,
    /// Parameters per kernel id, groups separated by `;`: `a=1,b=2;a=0.5,b0=1,b1=1`.
    #[arg(long)]
    params: Option<String>,
    /// `self`, `frozen:<h>` or `flow:<file>`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Recording grid step.
    #[arg(long)]
    grid: Option<f64>,
    /// Initial customer count.
    #[arg(long)]
    initial_k: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble and write trajectories, flow and a summary.
    Simulate(Common),
    /// Dynkin and martingale-problem residuals over a test-function catalog.
    Dynkin {
        #[command(flatten)]
        common: Common,
        /// Largest quadrature step.
        #[arg(long)]
        max_step: Option<f64>,
    },
    /// Density normalization and the marginal TV bound between two flows.
    Girsanov {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "flow2")]
        flow1: Option<PathBuf>,
        #[arg(long, requires = "flow1")]
        flow2: Option<PathBuf>,
    },
    /// Picard contraction and the uniqueness experiment.
    Picard {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iterations: Option<usize>,
        /// Manual horizon; chosen from the kernel bounds when absent.
        #[arg(long)]
        picard_horizon: Option<f64>,
        #[arg(long)]
        windows: Option<usize>,
        #[arg(long)]
        floor_pairs: Option<usize>,
    },
    /// Tightness tables over frozen-delay schemes with h = T/d.
    Tightness {
        #[command(flatten)]
        common: Common,
        /// Comma-separated divisors d.
        #[arg(long, value_delimiter = ',')]
        divisors: Option<Vec<u32>>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Compare the law of k at the horizon with the M/M/1 stationary law.
    Mm1Validate(Common),
    /// Run the suites selected in the configuration (or by --suite).
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated suites, or `all`.
        #[arg(long, value_delimiter = ',')]
        suite: Option<Vec<String>>,
    },
}

fn apply_common(config: &mut ExperimentConfig, c: &Common) -> Result<(), CliError> {
    if let Some(ids) = &c.kernel {
        config.kernel = parse_kernel_terms(ids, c.params.as_deref())?;
    } else if c.params.is_some() {
        return Err(CliError::Usage("--params needs --kernel".into()));
    }
    if let Some(m) = &c.mode {
        config.mode = m.clone();
    }
    if let Some(n) = c.particles {
        config.particles = n;
    }
    if let Some(t) = c.horizon {
        config.horizon = t;
    }
    if c.grid.is_some() {
        config.grid_step = c.grid;
    }
    if let Some(k) = c.initial_k {
        config.initial_k = k;
    }
    Ok(())
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.out = o;
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    let suite = match cli.command {
        Command::Simulate(c) => {
            apply_common(&mut config, &c)?;
            Some(Suite::Simulate)
        }
        Command::Mm1Validate(c) => {
            apply_common(&mut config, &c)?;
            Some(Suite::Mm1Validate)
        }
        Command::Dynkin { common, max_step } => {
            apply_common(&mut config, &common)?;
            if max_step.is_some() {
                config.dynkin.max_step = max_step;
            }
            Some(Suite::Dynkin)
        }
        Command::Girsanov { common, flow1, flow2 } => {
            apply_common(&mut config, &common)?;
            if flow1.is_some() {
                config.girsanov.flow1 = flow1;
                config.girsanov.flow2 = flow2;
            }
            Some(Suite::Girsanov)
        }
        Command::Picard { common, iterations, picard_horizon, windows, floor_pairs } => {
            apply_common(&mut config, &common)?;
            let p = &mut config.picard;
            p.iterations = iterations.unwrap_or(p.iterations);
            p.horizon = picard_horizon.or(p.horizon);
            p.windows = windows.unwrap_or(p.windows);
            p.floor_pairs = floor_pairs.unwrap_or(p.floor_pairs);
            Some(Suite::Picard)
        }
        Command::Tightness { common, divisors, epsilon } => {
            apply_common(&mut config, &common)?;
            if let Some(d) = divisors {
                config.tightness.divisors = d;
            }
            config.tightness.epsilon = epsilon.unwrap_or(config.tightness.epsilon);
            Some(Suite::Tightness)
        }
        Command::Run { common, suite } => {
            apply_common(&mut config, &common)?;
            if let Some(names) = suite {
                config.suites = names
                    .iter()
                    .map(|n| Suite::parse(n).ok_or_else(|| CliError::Usage(format!("unknown suite {n:?}"))))
                    .collect::<Result<_, _>>()?;
            }
            None
        }
    };
    if let Some(s) = suite {
        config.suites = vec![s];
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(cli).and_then(|config| run(&config));
    match result {
        Ok(outcome) => {
            for report in &outcome.suites {
                println!("{:<14} {}", report.suite, report.status);
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
