//! Picard iteration on measure flows and the small-horizon uniqueness
//! experiment.
//!
//! One Picard step simulates the process in [`SimMode::GivenFlow`] under the
//! current flow and records the flow of its marginals. Distances between
//! iterates are sup-over-grid TV proxies (mass-2 convention), which only see
//! marginals, not path laws.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{tv_distance_atomic, CellScheme, EmpiricalMeasure, IntensityKernel, KernelBounds, MeasureFlow};
use crate::rng::derive_seed;
use crate::simulator::{simulate, InitialLaw, SimConfig, SimMode};
use crate::state::State;

/// `C = ‖λ‖ + Σ_{n≥0} ((n+1)·K·‖Λ‖ + ‖λ‖)·‖λ‖^{n+1}/(n+1)!` at `T = 1`, with
/// `‖λ‖ = total_bar` and `‖Λ‖ = lambda_bar`. The factor `exp(−λ̲T) <= 1`
/// is dropped, which only makes `C` larger.
pub fn horizon_constant(bounds: &KernelBounds) -> Result<f64> {
    if !bounds.bounded_below() {
        return Err(Error::InvalidConfig(
            "horizon needs intensities bounded away from zero (lambda_underbar > 0)".into(),
        ));
    }
    let total = bounds.total_bar;
    let k_big = bounds.log_lipschitz * bounds.lambda_bar;
    let mut c = total;
    // power = total^{n+1}/(n+1)!
    let mut power = total;
    for n in 0usize.. {
        let term = ((n + 1) as f64 * k_big + total) * power;
        c += term;
        if (term < 1e-12 && n > 0) || n > 10_000 {
            break;
        }
        power *= total / (n + 2) as f64;
    }
    Ok(c)
}

/// `T = 0.9·min(1, 1/(2C))`, a horizon on which the Picard map contracts.
pub fn choose_horizon(bounds: &KernelBounds) -> Result<f64> {
    let c = horizon_constant(bounds)?;
    let cap = if c > 0.0 { (1.0 / (2.0 * c)).min(1.0) } else { 1.0 };
    Ok(0.9 * cap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOptions {
    /// Number of Picard steps (simulations); the run holds one more flow.
    pub iterations: usize,
    /// Reuse the same seed for every step instead of fresh seeds.
    pub common_random_numbers: bool,
    /// Stop early once a distance falls to this level.
    pub stop_at: Option<f64>,
    pub scheme: CellScheme,
}

impl PicardOptions {
    pub fn new(iterations: usize) -> Self {
        PicardOptions { iterations, common_random_numbers: false, stop_at: None, scheme: CellScheme::default() }
    }
}

/// Iterates `μ⁽⁰⁾, μ⁽¹⁾, …` of the Picard map.
#[derive(Debug, Clone)]
pub struct PicardRun {
    /// `μ⁽⁰⁾` resampled to the simulation grid, then one flow per step.
    pub flows: Vec<MeasureFlow>,
    /// `d_m = sup_t TV(μ⁽ᵐ⁺¹⁾_t, μ⁽ᵐ⁾_t)`; one fewer than `flows`.
    pub distances: Vec<f64>,
    pub seeds: Vec<u64>,
    pub horizon: f64,
    /// Particle states at the horizon after the last step.
    pub terminal_states: Vec<State>,
}

impl PicardRun {
    /// `d_{m+1}/d_m` for consecutive distances.
    pub fn ratios(&self) -> Vec<f64> {
        self.distances.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// Geometric mean of `d_{m+1}/d_m` over `m >= 1` (the first step starts
    /// from an arbitrary guess); `None` with fewer than three distances.
    pub fn contraction_estimate(&self) -> Option<f64> {
        let logs: Vec<f64> = self.ratios().iter().skip(1).filter(|r| r.is_finite() && **r > 0.0).map(|r| r.ln()).collect();
        if logs.is_empty() {
            None
        } else {
            Some((logs.iter().sum::<f64>() / logs.len() as f64).exp())
        }
    }

    pub fn last(&self) -> &MeasureFlow {
        self.flows.last().expect("at least the initial flow")
    }
}

/// Runs Picard steps from `initial_flow`. The mode of `sim` is replaced by
/// `GivenFlow` of the current iterate; step `m` uses seed
/// `derive_seed(sim.seed, m)` unless common random numbers are requested.
pub fn picard_iterate(
    kernel: &IntensityKernel,
    initial_flow: &MeasureFlow,
    sim: &SimConfig,
    options: &PicardOptions,
) -> Result<PicardRun> {
    if !kernel.bounds().bounded_below() {
        return Err(Error::InvalidConfig("Picard iteration needs lambda_underbar > 0".into()));
    }
    let grid = sim.grid()?;
    if initial_flow.horizon() < sim.horizon {
        return Err(Error::InvalidFlow(format!(
            "initial flow ends at {} before the horizon {}",
            initial_flow.horizon(),
            sim.horizon
        )));
    }
    let mut flows = vec![initial_flow.resample(&grid)?];
    let mut distances = Vec::new();
    let mut seeds = Vec::new();
    let mut terminal_states = Vec::new();
    for m in 0..options.iterations {
        let seed = if options.common_random_numbers { sim.seed } else { derive_seed(sim.seed, m as u64) };
        let current = flows.last().expect("non-empty").clone();
        let config = sim.clone().with_mode(SimMode::given(current)).with_seed(seed);
        let system = simulate(&config, kernel)?;
        let next = system.recorded_flow().clone();
        let d = next.sup_tv_proxy(flows.last().expect("non-empty"), &options.scheme)?;
        terminal_states = system.terminal_states();
        flows.push(next);
        distances.push(d);
        seeds.push(seed);
        if options.stop_at.is_some_and(|floor| d <= floor) {
            break;
        }
    }
    Ok(PicardRun { flows, distances, seeds, horizon: sim.horizon, terminal_states })
}

/// Spread of the sup-TV proxy between independent simulations of one flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseFloor {
    pub mean: f64,
    pub sd: f64,
    pub pairs: usize,
}

impl NoiseFloor {
    /// `mean + 3·sd`.
    pub fn tolerance(&self) -> f64 {
        self.mean + 3.0 * self.sd
    }
}

/// Simulates `pairs` pairs of independent `GivenFlow(flow)` systems and
/// summarizes the sup-TV proxy within each pair.
pub fn noise_floor(
    kernel: &IntensityKernel,
    flow: &MeasureFlow,
    sim: &SimConfig,
    pairs: usize,
    scheme: &CellScheme,
) -> Result<NoiseFloor> {
    if pairs == 0 {
        return Err(Error::InvalidConfig("noise floor needs at least one pair".into()));
    }
    let base = derive_seed(sim.seed, 0x6e6f_6973_65);
    let mut values = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let run = |tag: u64| {
            let config = sim.clone().with_mode(SimMode::given(flow.clone())).with_seed(derive_seed(base, tag));
            simulate(&config, kernel)
        };
        let (a, b) = (run(2 * p as u64)?, run(2 * p as u64 + 1)?);
        values.push(a.recorded_flow().sup_tv_proxy(b.recorded_flow(), scheme)?);
    }
    let mean = values.iter().sum::<f64>() / pairs as f64;
    let sd = if pairs > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (pairs - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(NoiseFloor { mean, sd, pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessOptions {
    /// Consecutive windows `[wT, (w+1)T]`.
    pub windows: usize,
    /// Picard steps per window and branch.
    pub iterations: usize,
    /// Pairs used for each window's noise floor; the spread of a sup-TV
    /// proxy is poorly estimated from fewer than about eight.
    pub floor_pairs: usize,
    pub scheme: CellScheme,
}

impl Default for UniquenessOptions {
    fn default() -> Self {
        UniquenessOptions { windows: 3, iterations: 4, floor_pairs: 8, scheme: CellScheme::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub window: usize,
    pub start: f64,
    /// `sup_t TV(A_m, B_m)` between the branches' iterates, `m = 1..`.
    pub branch_distances: Vec<f64>,
    /// Distance between the final iterates.
    pub distance: f64,
    pub floor: NoiseFloor,
    /// `distance <= floor.mean + 3·floor.sd`.
    pub merged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub horizon: f64,
    pub windows: Vec<WindowReport>,
    /// The final window merged.
    pub merged: bool,
}

/// Runs Picard iteration from two starting flows with the same initial
/// measure, on `[0, T]` and then window by window on `[T, 2T], …`. Each
/// branch restarts a window from its own terminal ensemble with a constant
/// guess at its own terminal measure, so a discrepancy has to be removed
/// by the iteration rather than by the restart.
pub fn uniqueness_experiment(
    kernel: &IntensityKernel,
    flow_a: &MeasureFlow,
    flow_b: &MeasureFlow,
    sim: &SimConfig,
    options: &UniquenessOptions,
) -> Result<UniquenessReport> {
    if tv_distance_atomic(flow_a.initial(), flow_b.initial()) > 1e-12 {
        return Err(Error::InvalidFlow("the two starting flows have different initial measures".into()));
    }
    if options.windows == 0 || options.iterations == 0 {
        return Err(Error::InvalidConfig("need at least one window and one iteration".into()));
    }
    let horizon = sim.horizon;
    let grid = sim.grid()?;
    let picard = PicardOptions { iterations: options.iterations, scheme: options.scheme, ..PicardOptions::new(0) };
    let mut guesses = (flow_a.clone(), flow_b.clone());
    let mut initial = (sim.initial.clone(), sim.initial.clone());
    let mut windows = Vec::with_capacity(options.windows);
    for w in 0..options.windows {
        let window_sim = |seed_tag: u64, init: &InitialLaw| {
            sim.clone()
                .with_time_offset(sim.time_offset + w as f64 * horizon)
                .with_seed(derive_seed(sim.seed, seed_tag))
                .with_initial(init.clone())
        };
        let sim_a = window_sim(2 * w as u64, &initial.0);
        let sim_b = window_sim(2 * w as u64 + 1, &initial.1);
        let run_a = picard_iterate(kernel, &guesses.0, &sim_a, &picard)?;
        let run_b = picard_iterate(kernel, &guesses.1, &sim_b, &picard)?;
        let branch_distances = run_a
            .flows
            .iter()
            .zip(&run_b.flows)
            .skip(1)
            .map(|(a, b)| a.sup_tv_proxy(b, &options.scheme))
            .collect::<Result<Vec<_>>>()?;
        let distance = *branch_distances.last().expect("iterations >= 1");
        let floor_sim = window_sim(0x1000 + w as u64, &initial.0);
        let floor = noise_floor(kernel, run_a.last(), &floor_sim, options.floor_pairs, &options.scheme)?;
        windows.push(WindowReport {
            window: w,
            start: w as f64 * horizon,
            branch_distances,
            distance,
            floor,
            merged: distance <= floor.tolerance(),
        });
        let constant_at_end = |run: &PicardRun| MeasureFlow::constant(run.last().terminal().clone(), grid.clone());
        guesses = (constant_at_end(&run_a)?, constant_at_end(&run_b)?);
        initial = (InitialLaw::Ensemble(run_a.terminal_states), InitialLaw::Ensemble(run_b.terminal_states));
    }
    let merged = windows.last().is_some_and(|w| w.merged);
    Ok(UniquenessReport { horizon, windows, merged })
}

/// A constant flow at the point mass on `state`.
pub fn dirac_flow(state: State, grid: Vec<f64>) -> Result<MeasureFlow> {
    MeasureFlow::constant(EmpiricalMeasure::dirac(state), grid)
}
