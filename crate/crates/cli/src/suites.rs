//! The experiment suites. Each writes its artifacts and returns a status.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use mfqueue::fixedpoint::{
    choose_horizon, dirac_flow, horizon_constant, noise_floor, picard_iterate, uniqueness_experiment, PicardOptions,
    UniquenessOptions,
};
use mfqueue::generator::{martingale_test, CountFactor, DynkinOptions, ObservableProduct, TestFunction};
use mfqueue::girsanov::{marginal_tv_check, normalization_check};
use mfqueue::io::{read_flow_csv, write_flow_csv, write_trajectories_csv};
use mfqueue::rng::derive_seed;
use mfqueue::tightness::{derived_level, sko1_diagnostic, sko2_diagnostic, SchemeMember};
use mfqueue::{
    simulate, uniform_grid, EmpiricalMeasure, InitialLaw, IntensityKernel, KernelSpec, MeasureFlow, SimConfig, SimMode,
    State,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, ModeSpec, Suite};
use crate::output::Artifacts;
use crate::CliError;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    /// `pass`, `fail` or `skipped: <reason>`.
    pub status: String,
    pub files: Vec<String>,
}

impl SuiteReport {
    pub fn failed(&self) -> bool {
        self.status == "fail"
    }
}

const A4_SKIP: &str = "skipped: A4 not satisfied";

fn verdict(pass: bool) -> String {
    if pass { "pass" } else { "fail" }.to_string()
}

pub struct Context<'a> {
    pub config: &'a ExperimentConfig,
    pub kernel: IntensityKernel,
    pub artifacts: Artifacts,
}

pub fn read_flow_file(path: &Path) -> Result<MeasureFlow, CliError> {
    let file = File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(read_flow_csv(BufReader::new(file))?.0)
}

impl Context<'_> {
    fn initial_state(&self) -> Result<State, CliError> {
        Ok(State::new(self.config.initial_k, 0.0, 0.0)?)
    }

    /// The configured simulation: mode, sizes, seed and initial state.
    fn base_sim(&self) -> Result<SimConfig, CliError> {
        let c = self.config;
        let mode = match c.mode_spec()? {
            ModeSpec::SelfConsistent => SimMode::SelfConsistent,
            ModeSpec::Frozen(h) => SimMode::FrozenDelay { h },
            ModeSpec::Flow(path) => SimMode::given(read_flow_file(&path)?),
        };
        Ok(SimConfig::new(c.particles, c.horizon, mode, c.seed)
            .with_grid_step(c.grid_step())
            .with_initial(InitialLaw::Point(self.initial_state()?)))
    }

    pub fn run(&mut self, suite: Suite) -> Result<SuiteReport, CliError> {
        let status = match suite {
            Suite::Simulate => self.simulate()?,
            Suite::Mm1Validate => self.mm1()?,
            Suite::Dynkin => self.dynkin()?,
            Suite::Girsanov => self.girsanov()?,
            Suite::Picard => self.picard()?,
            Suite::Tightness => self.tightness()?,
            Suite::All => unreachable!("expanded by the caller"),
        };
        Ok(SuiteReport { suite: suite.name().into(), status, files: self.artifacts.take_written() })
    }

    fn simulate(&mut self) -> Result<String, CliError> {
        let sim = self.base_sim()?;
        let system = simulate(&sim, &self.kernel)?;
        let invalid = system.trajectories().iter().filter(|t| t.validate().is_err()).count();
        let mut body = Vec::new();
        write_trajectories_csv(&mut body, system.trajectories())?;
        self.artifacts.write_text("simulate_trajectories.csv", &body)?;
        let mut flow = Vec::new();
        write_flow_csv(&mut flow, system.recorded_flow(), &self.config.cells)?;
        self.artifacts.write_flow("simulate_flow.csv", &flow)?;
        let terminal = EmpiricalMeasure::uniform(system.terminal_states())?;
        #[derive(Serialize)]
        struct Marginal {
            mean_k: f64,
            mean_x: f64,
            mean_y: f64,
            p_empty: f64,
            count_distribution: Vec<f64>,
        }
        #[derive(Serialize)]
        struct Report {
            mode: String,
            particles: usize,
            horizon: f64,
            structural_failures: usize,
            jump_counts: Vec<usize>,
            final_marginal: Marginal,
        }
        let report = Report {
            mode: sim.mode.label(),
            particles: sim.particles,
            horizon: sim.horizon,
            structural_failures: invalid,
            jump_counts: system.jump_count_distribution().counts,
            final_marginal: Marginal {
                mean_k: terminal.expect(|s| s.k() as f64),
                mean_x: terminal.expect(State::x),
                mean_y: terminal.expect(State::y),
                p_empty: terminal.expect(|s| if s.is_empty() { 1.0 } else { 0.0 }),
                count_distribution: terminal.count_distribution(),
            },
        };
        self.artifacts.write_json("simulate.json", &report)?;
        Ok(verdict(invalid == 0))
    }

    /// Law of `k` at the horizon against the geometric stationary law of the
    /// M/M/1 queue with the configured constant rates.
    fn mm1(&mut self) -> Result<String, CliError> {
        let (a, b) = match self.kernel.spec() {
            KernelSpec::Const { a, b } if *a > 0.0 && a < b => (*a, *b),
            _ => return Ok("skipped: needs a single const kernel with 0 < a < b".into()),
        };
        let c = self.config;
        let sim = SimConfig::new(c.particles, c.horizon, SimMode::SelfConsistent, derive_seed(c.seed, 1))
            .with_grid_step(c.horizon)
            .with_initial(InitialLaw::Point(self.initial_state()?));
        let system = simulate(&sim, &self.kernel)?;
        let empirical = EmpiricalMeasure::uniform(system.terminal_states())?.count_distribution();
        let r = a / b;
        #[derive(Serialize)]
        struct Row {
            n: usize,
            empirical: f64,
            geometric: f64,
        }
        let rows: Vec<Row> = empirical
            .iter()
            .enumerate()
            .map(|(n, &p)| Row { n, empirical: p, geometric: (1.0 - r) * r.powi(n as i32) })
            .collect();
        let tail = r.powi(empirical.len() as i32);
        let tv: f64 = rows.iter().map(|row| (row.empirical - row.geometric).abs()).sum::<f64>() + tail;
        self.artifacts.write_csv("mm1.csv", &rows)?;
        #[derive(Serialize)]
        struct Report {
            a: f64,
            b: f64,
            particles: usize,
            horizon: f64,
            tv: f64,
            half_tv: f64,
            threshold: f64,
            pass: bool,
        }
        let pass = tv <= 0.02;
        let report = Report { a, b, particles: c.particles, horizon: c.horizon, tv, half_tv: tv / 2.0, threshold: 0.02, pass };
        self.artifacts.write_json("mm1.json", &report)?;
        Ok(verdict(pass))
    }

    fn dynkin(&mut self) -> Result<String, CliError> {
        let c = self.config;
        let mut sim = self.base_sim()?.with_seed(derive_seed(c.seed, 2));
        if let Some(n) = c.dynkin.particles {
            sim.particles = n;
        }
        let system = simulate(&sim, &self.kernel)?;
        let options = DynkinOptions { max_step: c.dynkin.max_step, ..DynkinOptions::default() };
        #[derive(Serialize)]
        struct Row {
            case: usize,
            g: String,
            t1: f64,
            t2: f64,
            factors: String,
            mean: f64,
            se: f64,
            pass: bool,
        }
        let mut rows = Vec::new();
        for (case, (g, obs)) in dynkin_cases(c.horizon)?.into_iter().enumerate() {
            let est = martingale_test(&system, &self.kernel, &g, &obs, &options)?;
            let factors = obs.factors.iter().map(|(t, f)| format!("{}@{t}", describe(f))).collect::<Vec<_>>().join(" ");
            rows.push(Row {
                case,
                g: describe(&g),
                t1: obs.start,
                t2: obs.end,
                factors,
                mean: est.mean,
                se: est.se,
                pass: est.mean.abs() <= 3.0 * est.se,
            });
        }
        let passed = rows.iter().filter(|r| r.pass).count();
        let pass = passed as f64 >= 0.95 * rows.len() as f64;
        self.artifacts.write_csv("dynkin.csv", &rows)?;
        #[derive(Serialize)]
        struct Report<'a> {
            mode: String,
            particles: usize,
            cases: &'a [Row],
            passed: usize,
            pass: bool,
        }
        let report = Report { mode: sim.mode.label(), particles: sim.particles, cases: &rows, passed, pass };
        self.artifacts.write_json("dynkin.json", &report)?;
        Ok(verdict(pass))
    }

    fn girsanov(&mut self) -> Result<String, CliError> {
        if !self.kernel.bounds().bounded_below() {
            return Ok(A4_SKIP.into());
        }
        let c = self.config;
        let (flow1, flow2) = match (&c.girsanov.flow1, &c.girsanov.flow2) {
            (Some(f1), Some(f2)) => (read_flow_file(f1)?, read_flow_file(f2)?),
            _ => {
                let n = c.girsanov.flow_particles.unwrap_or(c.particles);
                let flow = |k: u32, tag: u64| -> Result<MeasureFlow, CliError> {
                    let sim = SimConfig::new(n, c.horizon, SimMode::SelfConsistent, derive_seed(c.seed, tag))
                        .with_grid_step(c.grid_step())
                        .with_initial(InitialLaw::Point(State::new(k, 0.0, 0.0)?));
                    Ok(simulate(&sim, &self.kernel)?.recorded_flow().clone())
                };
                (flow(c.initial_k, 3)?, flow(c.girsanov.alt_initial_k, 4)?)
            }
        };
        let base = SimConfig::new(c.particles, c.horizon, SimMode::SelfConsistent, derive_seed(c.seed, 5))
            .with_grid_step(c.grid_step())
            .with_initial(InitialLaw::Point(self.initial_state()?));
        let system1 = simulate(&base.clone().with_mode(SimMode::given(flow1.clone())), &self.kernel)?;
        let system2 = simulate(&base.with_mode(SimMode::given(flow2.clone())), &self.kernel)?;
        let rho = normalization_check(&system1, &self.kernel, &flow1, &flow2)?;
        let tv = marginal_tv_check(&system1, &system2, &self.kernel, &flow1, &flow2, c.horizon, &c.cells)?;
        let normalization_pass = (rho.mean - 1.0).abs() <= 3.0 * rho.se;
        let pass = normalization_pass && tv.pass;
        #[derive(Serialize)]
        struct Report {
            rho_mean: f64,
            rho_se: f64,
            psi: f64,
            psi_se: f64,
            phi: f64,
            phi_se: f64,
            combined_se: f64,
            normalization_pass: bool,
            tv_bound_pass: bool,
            pass: bool,
        }
        let report = Report {
            rho_mean: rho.mean,
            rho_se: rho.se,
            psi: tv.psi,
            psi_se: tv.psi_se,
            phi: tv.phi,
            phi_se: tv.phi_se,
            combined_se: tv.combined_se,
            normalization_pass,
            tv_bound_pass: tv.pass,
            pass,
        };
        self.artifacts.write_json("girsanov.json", &report)?;
        Ok(verdict(pass))
    }

    fn picard(&mut self) -> Result<String, CliError> {
        let bounds = *self.kernel.bounds();
        if !bounds.bounded_below() {
            return Ok(A4_SKIP.into());
        }
        let c = self.config;
        let p = &c.picard;
        let horizon = match p.horizon {
            Some(t) => t,
            None => choose_horizon(&bounds)?,
        };
        let step = horizon / p.grid_intervals as f64;
        let init = self.initial_state()?;
        let sim = SimConfig::new(c.particles, horizon, SimMode::SelfConsistent, derive_seed(c.seed, 6))
            .with_grid_step(step)
            .with_initial(InitialLaw::Point(init));
        let grid = uniform_grid(horizon, step)?;
        let options = PicardOptions { iterations: p.iterations, scheme: c.cells, ..PicardOptions::new(0) };
        let run = picard_iterate(&self.kernel, &dirac_flow(init, grid.clone())?, &sim, &options)?;
        let floor = noise_floor(&self.kernel, run.last(), &sim, p.floor_pairs, &c.cells)?;
        #[derive(Serialize)]
        struct Check {
            m: usize,
            d_m: f64,
            d_next: f64,
            bound: f64,
            pass: bool,
        }
        let d = &run.distances;
        let checks: Vec<Check> = (1..d.len().saturating_sub(1))
            .map(|m| {
                let bound = 0.5 * d[m] + floor.tolerance();
                Check { m, d_m: d[m], d_next: d[m + 1], bound, pass: d[m + 1] <= bound }
            })
            .collect();
        let far = State::new(c.initial_k + 5, 0.0, 0.0)?;
        let measures = grid
            .iter()
            .map(|&t| EmpiricalMeasure::dirac(if t == 0.0 { init } else { far }))
            .collect();
        let flow_b = MeasureFlow::new(grid.clone(), measures)?;
        let uniq_options = UniquenessOptions {
            windows: p.windows,
            iterations: p.window_iterations,
            floor_pairs: p.floor_pairs,
            scheme: c.cells,
        };
        let uniq_sim = sim.clone().with_seed(derive_seed(c.seed, 7));
        let uniqueness =
            uniqueness_experiment(&self.kernel, &dirac_flow(init, grid)?, &flow_b, &uniq_sim, &uniq_options)?;
        #[derive(Serialize)]
        struct Row {
            m: usize,
            d_m: f64,
        }
        let rows: Vec<Row> = d.iter().enumerate().map(|(m, &d_m)| Row { m, d_m }).collect();
        self.artifacts.write_csv("picard.csv", &rows)?;
        let contraction_pass = !checks.is_empty() && checks.iter().all(|ch| ch.pass);
        let pass = contraction_pass && uniqueness.merged;
        let report = serde_json::json!({
            "horizon": horizon,
            "horizon_constant": horizon_constant(&bounds)?,
            "distances": d,
            "ratios": run.ratios(),
            "contraction_estimate": run.contraction_estimate(),
            "noise_floor": floor,
            "contraction_checks": checks,
            "contraction_pass": contraction_pass,
            "uniqueness": uniqueness,
            "pass": pass,
        });
        self.artifacts.write_json("picard.json", &report)?;
        Ok(verdict(pass))
    }

    fn tightness(&mut self) -> Result<String, CliError> {
        let c = self.config;
        let t = &c.tightness;
        let max_div = *t.divisors.iter().max().expect("validated non-empty");
        let step = c.grid_step().min(c.horizon / max_div as f64);
        let init = self.initial_state()?;
        let systems = t
            .divisors
            .iter()
            .map(|&div| {
                let h = c.horizon / div as f64;
                let sim = SimConfig::new(c.particles, c.horizon, SimMode::FrozenDelay { h }, derive_seed(c.seed, 100 + div as u64))
                    .with_grid_step(step)
                    .with_initial(InitialLaw::Point(init));
                Ok((h, simulate(&sim, &self.kernel)?))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let family: Vec<SchemeMember<'_>> = systems.iter().map(|(h, s)| SchemeMember { h: *h, system: s }).collect();
        let bounds = self.kernel.bounds();
        let c0 = init.norm();
        let level = derived_level(c0, c.horizon, bounds.lambda_bar);
        let levels = [c0 + 1.0, c0 + c.horizon, level];
        let sko1 = sko1_diagnostic(&family, &levels)?;
        let windows = if t.windows.is_empty() { vec![step, 2.0 * step, 4.0 * step] } else { t.windows.clone() };
        let sko2 = sko2_diagnostic(&family, &windows, t.epsilon, bounds.total_bar)?;
        #[derive(Serialize)]
        struct Sko1Row {
            h_scheme: f64,
            c: f64,
            value: f64,
            se: f64,
        }
        #[derive(Serialize)]
        struct Sko2Row {
            h_scheme: f64,
            h_window: f64,
            value: f64,
            se: f64,
            bound: Option<f64>,
        }
        let rows1: Vec<Sko1Row> =
            sko1.entries.iter().map(|e| Sko1Row { h_scheme: e.h, c: e.c, value: e.value, se: e.se }).collect();
        let rows2: Vec<Sko2Row> = sko2
            .entries
            .iter()
            .map(|e| Sko2Row { h_scheme: e.h, h_window: e.window, value: e.value, se: e.se, bound: e.bound })
            .collect();
        self.artifacts.write_csv("tightness_sko1.csv", &rows1)?;
        self.artifacts.write_csv("tightness_sko2.csv", &rows2)?;
        let level_max = sko1.column_max.iter().find(|(cc, _)| *cc == level).map_or(0.0, |p| p.1);
        let sko1_pass = level_max <= 0.01;
        let sko2_pass = sko2.within_bounds();
        let report = serde_json::json!({
            "derived_level": level,
            "sko1": sko1,
            "sko2": sko2,
            "sko1_pass": sko1_pass,
            "sko2_pass": sko2_pass,
            "pass": sko1_pass && sko2_pass,
        });
        self.artifacts.write_json("tightness.json", &report)?;
        Ok(verdict(sko1_pass && sko2_pass))
    }
}

fn describe(g: &TestFunction) -> String {
    match g {
        TestFunction::Elapsed => "x".into(),
        TestFunction::Product { scale, factor, alpha, beta } => {
            let f = match factor {
                CountFactor::One => "1".to_string(),
                CountFactor::ExpNeg => "exp(-k)".to_string(),
                CountFactor::Capped { cap } => format!("min(k,{cap})/{cap}"),
                CountFactor::Bump { k0 } => format!("1(k={k0})"),
            };
            format!("{scale}*{f}*exp(-{alpha}x-{beta}y)")
        }
    }
}

/// Ten `(g, observable)` cases spread over `[0, T]`, four with past factors.
pub fn dynkin_cases(horizon: f64) -> Result<Vec<(TestFunction, ObservableProduct)>, CliError> {
    let t = horizon;
    let capped = TestFunction::of_count(CountFactor::Capped { cap: 5 });
    let decay = TestFunction::product(1.0, CountFactor::ExpNeg, 0.5, 0.5)?;
    let arrival_age = TestFunction::product(1.0, CountFactor::One, 1.0, 0.0)?;
    let empty = TestFunction::of_count(CountFactor::Bump { k0: 0 });
    let single = TestFunction::of_count(CountFactor::Bump { k0: 1 });
    let mixed = TestFunction::product(2.0, CountFactor::Capped { cap: 3 }, 0.2, 1.0)?;
    Ok(vec![
        (capped, ObservableProduct::plain(0.0, t)),
        (decay, ObservableProduct::plain(0.0, 0.5 * t)),
        (arrival_age, ObservableProduct::plain(0.25 * t, t)),
        (empty, ObservableProduct::plain(0.0, t)),
        (single, ObservableProduct::plain(0.5 * t, t)),
        (mixed, ObservableProduct::plain(0.0, t)),
        (capped, ObservableProduct::plain(0.5 * t, t).with_factor(0.5 * t, empty)),
        (
            decay,
            ObservableProduct::plain(0.5 * t, t)
                .with_factor(0.25 * t, arrival_age)
                .with_factor(0.5 * t, TestFunction::of_count(CountFactor::ExpNeg)),
        ),
        (empty, ObservableProduct::plain(0.25 * t, 0.75 * t).with_factor(0.25 * t, TestFunction::of_count(CountFactor::ExpNeg))),
        (
            mixed,
            ObservableProduct::plain(0.5 * t, t)
                .with_factor(0.0, TestFunction::of_count(CountFactor::Capped { cap: 2 }))
                .with_factor(0.5 * t, TestFunction::of_count(CountFactor::Capped { cap: 2 })),
        ),
    ])
}
