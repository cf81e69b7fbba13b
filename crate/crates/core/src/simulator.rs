//! Event-driven N-particle construction of the mean-field queue.
//!
//! Every particle is simulated by thinning: candidate times come from an
//! exponential clock at the kernel's dominating rate `total_bar`, and a
//! candidate at time `t` becomes an arrival with probability
//! `Λ⁺[t, X*, μ*] / total_bar`, a service with probability
//! `Λ⁻[t, X*, μ*] / total_bar`, and is discarded otherwise. The arguments
//! `(X*, μ*)` depend on the mode:
//!
//! * [`SimMode::SelfConsistent`]: the particle's current state and the
//!   current empirical measure of the whole ensemble,
//! * [`SimMode::FrozenDelay`]: the particle's own state at `(t − h)₊` and the
//!   recorded flow at `(t − h)₊`, built window by window over
//!   `[0, h], [h, 2h], …`,
//! * [`SimMode::GivenFlow`]: the current state and an externally supplied
//!   measure flow.
//!
//! A service can only happen when the current queue is nonempty.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{
    grid_index, uniform_grid, EmpiricalMeasure, IntensityKernel, MeasureFlow, MeasureSummary, SummaryFlow,
};
use crate::rng::{stream, Lane};
use crate::state::{JumpType, State, Trajectory, TrajectoryEvent};
use crate::stats::{poisson_tail, Estimate};

/// How intensities see the state and the measure.
#[derive(Debug, Clone)]
pub enum SimMode {
    SelfConsistent,
    /// Intensities evaluated at `(t − h)₊`.
    FrozenDelay { h: f64 },
    GivenFlow(Arc<MeasureFlow>),
}

impl SimMode {
    pub fn given(flow: MeasureFlow) -> Self {
        SimMode::GivenFlow(Arc::new(flow))
    }

    pub fn label(&self) -> String {
        match self {
            SimMode::SelfConsistent => "self".into(),
            SimMode::FrozenDelay { h } => format!("frozen:{h}"),
            SimMode::GivenFlow(_) => "flow".into(),
        }
    }
}

/// Law of the initial state.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    Point(State),
    /// Each particle draws independently from the atoms.
    Atoms(EmpiricalMeasure),
    /// Particle `i` starts at `states[i]`; the length must equal the
    /// particle count.
    Ensemble(Vec<State>),
}

impl InitialLaw {
    fn sample(&self, particle: usize, seed: u64) -> State {
        match self {
            InitialLaw::Point(s) => *s,
            InitialLaw::Ensemble(states) => states[particle],
            InitialLaw::Atoms(mu) => {
                let atoms = mu.atoms();
                if atoms.len() == 1 {
                    return atoms[0].0;
                }
                let u: f64 = stream(seed, particle as u64, 0, Lane::Initial).random();
                let mut acc = 0.0;
                for (s, w) in atoms {
                    acc += w;
                    if u < acc {
                        return *s;
                    }
                }
                atoms.last().expect("non-empty measure").0
            }
        }
    }
}

/// Parameters of one ensemble simulation.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub particles: usize,
    pub horizon: f64,
    pub mode: SimMode,
    /// Step `Δ` of the grid on which the flow is recorded.
    pub grid_step: f64,
    pub seed: u64,
    pub initial: InitialLaw,
    /// Absolute time of the local time origin, passed to the kernel as
    /// `t = time_offset + s`.
    pub time_offset: f64,
}

impl SimConfig {
    /// Defaults: `Δ = 0.01·T`, every particle starts in the empty state.
    pub fn new(particles: usize, horizon: f64, mode: SimMode, seed: u64) -> Self {
        SimConfig {
            particles,
            horizon,
            mode,
            grid_step: 0.01 * horizon,
            seed,
            initial: InitialLaw::Point(State::ZERO),
            time_offset: 0.0,
        }
    }

    pub fn with_grid_step(mut self, step: f64) -> Self {
        self.grid_step = step;
        self
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_mode(mut self, mode: SimMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_time_offset(mut self, offset: f64) -> Self {
        self.time_offset = offset;
        self
    }

    /// Every violated constraint, empty when the configuration is runnable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.particles == 0 {
            out.push("particles: must be >= 1".to_string());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            out.push(format!("horizon: {} must be finite and > 0", self.horizon));
        }
        if !(self.grid_step.is_finite() && self.grid_step > 0.0) {
            out.push(format!("grid_step: {} must be finite and > 0", self.grid_step));
        }
        if !(self.time_offset.is_finite() && self.time_offset >= 0.0) {
            out.push(format!("time_offset: {} must be finite and >= 0", self.time_offset));
        }
        match &self.mode {
            SimMode::FrozenDelay { h } => {
                if !(h.is_finite() && *h > 0.0) {
                    out.push(format!("mode: delay h = {h} must be finite and > 0"));
                } else if self.grid_step > *h {
                    out.push(format!("grid_step: {} must not exceed the delay h = {h}", self.grid_step));
                }
            }
            SimMode::GivenFlow(flow) => {
                if flow.horizon() < self.horizon {
                    out.push(format!(
                        "mode: given flow ends at {} before the horizon {}",
                        flow.horizon(),
                        self.horizon
                    ));
                }
            }
            SimMode::SelfConsistent => {}
        }
        if let InitialLaw::Ensemble(states) = &self.initial {
            if states.len() != self.particles {
                out.push(format!("initial: ensemble has {} states for {} particles", states.len(), self.particles));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v.join("; ")))
        }
    }

    /// The recording grid `0, Δ, …, T`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        uniform_grid(self.horizon, self.grid_step)
    }
}

/// A trajectory under construction.
#[derive(Debug, Clone)]
pub(crate) struct Track {
    initial: State,
    events: Vec<TrajectoryEvent>,
    last_post: State,
    last_time: f64,
}

impl Track {
    pub(crate) fn new(initial: State) -> Self {
        Track { initial, events: Vec::new(), last_post: initial, last_time: 0.0 }
    }

    pub(crate) fn from_trajectory(traj: &Trajectory) -> Self {
        let (last_post, last_time) = traj.events().last().map(|e| (e.post, e.time)).unwrap_or((traj.initial(), 0.0));
        Track { initial: traj.initial(), events: traj.events().to_vec(), last_post, last_time }
    }

    #[inline]
    fn current(&self, t: f64) -> State {
        self.last_post.drifted(t - self.last_time)
    }

    /// Right-continuous state at a time no later than the current one.
    #[inline]
    fn state_at(&self, t: f64) -> State {
        let idx = self.events.partition_point(|e| e.time <= t);
        if idx == 0 {
            self.initial.drifted(t.max(0.0))
        } else {
            let ev = &self.events[idx - 1];
            ev.post.drifted(t - ev.time)
        }
    }

    fn record(&mut self, time: f64, kind: JumpType) -> Result<()> {
        let pre = self.current(time);
        let post = pre.jump(kind)?;
        self.events.push(TrajectoryEvent { time, kind, pre, post });
        self.last_post = post;
        self.last_time = time;
        Ok(())
    }

    pub(crate) fn into_trajectory(self, horizon: f64) -> Trajectory {
        Trajectory::from_parts_unchecked(self.initial, self.events, horizon)
    }
}

/// Outcome of one thinning candidate.
#[inline]
fn decide<R: Rng>(rng: &mut R, t: f64, up: f64, down: f64, bound: f64) -> Result<Option<JumpType>> {
    let total = up + down;
    if total > bound * (1.0 + 1e-12) {
        return Err(Error::BoundViolation { rate: total, bound, t });
    }
    let u = rng.random::<f64>() * bound;
    Ok(if u < up {
        Some(JumpType::Arrival)
    } else if u < total {
        Some(JumpType::Service)
    } else {
        None
    })
}

/// Thins a dominating Poisson clock over `(start, end]`. `rates(t, state)`
/// returns `(Λ⁺, Λ⁻)`; the service rate is zeroed here when the current
/// queue is empty.
fn thin_interval<R, F>(track: &mut Track, start: f64, end: f64, bound: f64, rng: &mut R, mut rates: F) -> Result<()>
where
    R: Rng,
    F: FnMut(f64, &Track, &State) -> Result<(f64, f64)>,
{
    if bound <= 0.0 {
        return Ok(());
    }
    let mut t = start;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap / bound;
        if t > end {
            return Ok(());
        }
        let s = track.current(t);
        let (up, down) = rates(t, track, &s)?;
        let down = if s.is_empty() { 0.0 } else { down };
        // a candidate that rounds onto the previous jump time is dropped
        if let Some(kind) = decide(rng, t, up, down, bound)? {
            if t > track.last_time {
                track.record(t, kind)?;
            }
        }
    }
}

/// Simulates `config.particles` particles under `kernel`.
pub fn simulate(config: &SimConfig, kernel: &IntensityKernel) -> Result<ParticleSystem> {
    config.validate()?;
    match &config.mode {
        SimMode::SelfConsistent => simulate_self_consistent(config, kernel),
        SimMode::FrozenDelay { .. } => {
            let mut scheme = FrozenScheme::new(config.clone(), kernel)?;
            for j in 0..scheme.window_count() {
                scheme.step_window(j)?;
            }
            scheme.finish()
        }
        SimMode::GivenFlow(flow) => simulate_given_flow(config, kernel, flow),
    }
}

fn initial_tracks(config: &SimConfig) -> Vec<Track> {
    (0..config.particles).map(|i| Track::new(config.initial.sample(i, config.seed))).collect()
}

fn simulate_given_flow(config: &SimConfig, kernel: &IntensityKernel, flow: &MeasureFlow) -> Result<ParticleSystem> {
    let summary = flow.summarize(kernel);
    let bound = kernel.bounds().total_bar;
    let (horizon, offset, seed) = (config.horizon, config.time_offset, config.seed);
    let mut tracks = initial_tracks(config);
    tracks.par_iter_mut().enumerate().try_for_each(|(i, track)| {
        let mut rng = stream(seed, i as u64, 0, Lane::Events);
        thin_interval(track, 0.0, horizon, bound, &mut rng, |t, _, s| Ok(kernel.rates(offset + t, s, summary.at(t))))
    })?;
    ParticleSystem::from_tracks(config.clone(), tracks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    time: f64,
    particle: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // reversed: BinaryHeap is a max-heap and the earliest candidate must pop first
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.particle.cmp(&self.particle))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Global event queue over the ensemble; the empirical measure is updated
/// after every accepted jump.
fn simulate_self_consistent(config: &SimConfig, kernel: &IntensityKernel) -> Result<ParticleSystem> {
    let n = config.particles;
    let bound = kernel.bounds().total_bar;
    let mut tracks = initial_tracks(config);
    let dim = kernel.feature_dim();
    let mut sums = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    let add_features = |sums: &mut [f64], s: &State, sign: f64, buf: &mut [f64]| {
        kernel.write_features(s, buf);
        for (acc, f) in sums.iter_mut().zip(buf.iter()) {
            *acc += sign * f;
        }
    };
    for track in &tracks {
        add_features(&mut sums, &track.initial, 1.0, &mut buf);
    }
    if bound > 0.0 {
        let mut rngs: Vec<_> = (0..n).map(|i| stream(config.seed, i as u64, 0, Lane::Events)).collect();
        let mut heap = BinaryHeap::with_capacity(n);
        for (i, rng) in rngs.iter_mut().enumerate() {
            let gap: f64 = Exp1.sample(rng);
            heap.push(Candidate { time: gap / bound, particle: i });
        }
        let mut mean = vec![0.0; dim];
        let inv_n = 1.0 / n as f64;
        while let Some(Candidate { time: t, particle: i }) = heap.pop() {
            if t > config.horizon {
                continue;
            }
            let track = &mut tracks[i];
            let rng = &mut rngs[i];
            let s = track.current(t);
            for (m, acc) in mean.iter_mut().zip(&sums) {
                *m = acc * inv_n;
            }
            let (up, down) = kernel.rates(config.time_offset + t, &s, &mean);
            if let Some(kind) = decide(rng, t, up, down, bound)? {
                if t > track.last_time {
                    track.record(t, kind)?;
                    add_features(&mut sums, &s, -1.0, &mut buf);
                    add_features(&mut sums, &track.last_post, 1.0, &mut buf);
                }
            }
            let gap: f64 = Exp1.sample(rng);
            heap.push(Candidate { time: t + gap / bound, particle: i });
        }
    }
    ParticleSystem::from_tracks(config.clone(), tracks)
}

/// The delayed history a frozen-delay particle may read: recorded grid
/// summaries and its own past, complete up to `completed_until`.
struct DelayedView<'a> {
    kernel: &'a IntensityKernel,
    grid: &'a [f64],
    recorded: &'a [MeasureSummary],
    completed_until: f64,
    h: f64,
    offset: f64,
}

impl DelayedView<'_> {
    /// `(Λ⁺, Λ⁻)[t, X_{(t−h)₊}, μ_{(t−h)₊}]`.
    fn rates(&self, t: f64, track: &Track) -> Result<(f64, f64)> {
        let mut d = (t - self.h).max(0.0);
        if d > self.completed_until {
            if d - self.completed_until <= 1e-9 * self.h {
                d = self.completed_until;
            } else {
                return Err(Error::SchemeViolation(format!(
                    "intensity at t = {t} needs history at {d}, completed only up to {}",
                    self.completed_until
                )));
            }
        }
        let idx = grid_index(self.grid, d);
        let summary = self.recorded.get(idx).ok_or_else(|| {
            Error::SchemeViolation(format!("flow at grid time {} not yet recorded", self.grid[idx]))
        })?;
        let delayed = track.state_at(d);
        Ok(self.kernel.rates(self.offset + t, &delayed, summary))
    }
}

/// Window-by-window construction of the frozen-delay scheme. Window `j`
/// covers `[j·h, (j+1)·h ∧ T]` and only reads history up to `j·h`.
pub struct FrozenScheme<'k> {
    kernel: &'k IntensityKernel,
    config: SimConfig,
    h: f64,
    windows: usize,
    tracks: Vec<Track>,
    grid: Vec<f64>,
    recorded: Vec<MeasureSummary>,
    next_window: usize,
    completed_until: f64,
}

impl<'k> FrozenScheme<'k> {
    pub fn new(config: SimConfig, kernel: &'k IntensityKernel) -> Result<Self> {
        config.validate()?;
        let h = match config.mode {
            SimMode::FrozenDelay { h } => h,
            _ => return Err(Error::InvalidConfig("frozen scheme requires FrozenDelay mode".into())),
        };
        let windows = ((config.horizon / h) - 1e-9).ceil().max(1.0) as usize;
        let tracks = initial_tracks(&config);
        let grid = config.grid()?;
        let recorded = vec![kernel.summarize_states(tracks.iter().map(|t| &t.initial))];
        Ok(FrozenScheme { kernel, config, h, windows, tracks, grid, recorded, next_window: 0, completed_until: 0.0 })
    }

    pub fn window_count(&self) -> usize {
        self.windows
    }

    pub fn completed_until(&self) -> f64 {
        self.completed_until
    }

    /// `[start, end]` of window `j`.
    pub fn window_bounds(&self, j: usize) -> (f64, f64) {
        let start = j as f64 * self.h;
        let end = if j + 1 >= self.windows { self.config.horizon } else { (j + 1) as f64 * self.h };
        (start, end)
    }

    /// Extends every particle over window `j`, then records the grid points
    /// it covers. Windows must be stepped in order.
    pub fn step_window(&mut self, j: usize) -> Result<()> {
        if j != self.next_window {
            return Err(Error::SchemeViolation(format!(
                "window {j} requested but history is complete only through window {}",
                self.next_window as i64 - 1
            )));
        }
        let (start, end) = self.window_bounds(j);
        let bound = self.kernel.bounds().total_bar;
        let seed = self.config.seed;
        let view = DelayedView {
            kernel: self.kernel,
            grid: &self.grid,
            recorded: &self.recorded,
            completed_until: self.completed_until,
            h: self.h,
            offset: self.config.time_offset,
        };
        self.tracks.par_iter_mut().enumerate().try_for_each(|(i, track)| {
            let mut rng = stream(seed, i as u64, j as u64, Lane::Events);
            thin_interval(track, start, end, bound, &mut rng, |t, track, _| view.rates(t, track))
        })?;
        while self.recorded.len() < self.grid.len() && self.grid[self.recorded.len()] <= end {
            let s = self.grid[self.recorded.len()];
            let states: Vec<State> = self.tracks.iter().map(|tr| tr.state_at(s)).collect();
            self.recorded.push(self.kernel.summarize_states(&states));
        }
        self.completed_until = end;
        self.next_window += 1;
        Ok(())
    }

    /// Summaries recorded so far, one per completed grid point.
    pub fn recorded_summaries(&self) -> &[MeasureSummary] {
        &self.recorded
    }

    pub fn finish(self) -> Result<ParticleSystem> {
        if self.next_window != self.windows {
            return Err(Error::SchemeViolation(format!(
                "finished after {} of {} windows",
                self.next_window, self.windows
            )));
        }
        ParticleSystem::from_tracks(self.config, self.tracks)
    }
}

/// Extends a frozen scheme by one window (see [`FrozenScheme::step_window`]).
pub fn frozen_window_step(scheme: &mut FrozenScheme<'_>, window: usize) -> Result<()> {
    scheme.step_window(window)
}

/// A completed ensemble: one trajectory per particle plus the flow of its
/// empirical marginals on the recording grid.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    config: SimConfig,
    trajectories: Vec<Trajectory>,
    grid: Vec<f64>,
    flow: OnceLock<MeasureFlow>,
}

impl ParticleSystem {
    fn from_tracks(config: SimConfig, tracks: Vec<Track>) -> Result<Self> {
        let horizon = config.horizon;
        let trajectories = tracks.into_iter().map(|t| t.into_trajectory(horizon)).collect();
        let grid = config.grid()?;
        Ok(ParticleSystem { config, trajectories, grid, flow: OnceLock::new() })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn particles(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// States of all particles at `t`.
    pub fn states_at(&self, t: f64) -> Result<Vec<State>> {
        if t.is_nan() || t < 0.0 || t > self.horizon() {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon() });
        }
        Ok(self.trajectories.iter().map(|tr| tr.state_at_unchecked(t)).collect())
    }

    /// Uniform empirical measure of the particles at `t`.
    pub fn marginal(&self, t: f64) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.states_at(t)?)
    }

    pub fn terminal_states(&self) -> Vec<State> {
        self.trajectories.iter().map(|tr| tr.state_at_unchecked(self.horizon())).collect()
    }

    /// Empirical marginals on the recording grid.
    pub fn recorded_flow(&self) -> &MeasureFlow {
        self.flow.get_or_init(|| {
            let measures = self
                .grid
                .iter()
                .map(|&s| EmpiricalMeasure::uniform(self.states_at(s).expect("grid within horizon")))
                .collect::<Result<Vec<_>>>()
                .expect("non-empty ensemble");
            MeasureFlow::new(self.grid.clone(), measures).expect("valid grid")
        })
    }

    /// Kernel summaries of the recorded flow.
    pub fn recorded_summary(&self, kernel: &IntensityKernel) -> SummaryFlow {
        let summaries = self
            .grid
            .iter()
            .map(|&s| {
                let states: Vec<State> = self.trajectories.iter().map(|tr| tr.state_at_unchecked(s)).collect();
                kernel.summarize_states(&states)
            })
            .collect();
        SummaryFlow { grid: self.grid.clone(), summaries }
    }

    /// Exact kernel summary of the ensemble's empirical measure as a step
    /// function of time, with a step at every jump of every particle.
    pub fn ensemble_summary(&self, kernel: &IntensityKernel) -> SummaryFlow {
        let dim = kernel.feature_dim();
        let n = self.particles() as f64;
        let mut sums = vec![0.0; dim];
        for tr in &self.trajectories {
            for (acc, f) in sums.iter_mut().zip(kernel.features(&tr.initial())) {
                *acc += f;
            }
        }
        let mut grid = vec![0.0];
        let mut summaries = vec![sums.iter().map(|s| s / n).collect::<Vec<_>>()];
        if dim == 0 {
            return SummaryFlow { grid, summaries };
        }
        let mut jumps: Vec<(f64, usize, usize)> = self
            .trajectories
            .iter()
            .enumerate()
            .flat_map(|(p, tr)| (0..tr.events().len()).map(move |e| (tr.events()[e].time, p, e)))
            .collect();
        jumps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut before = vec![0.0; dim];
        let mut after = vec![0.0; dim];
        for (time, p, e) in jumps {
            let ev = &self.trajectories[p].events()[e];
            kernel.write_features(&ev.pre, &mut before);
            kernel.write_features(&ev.post, &mut after);
            for d in 0..dim {
                sums[d] += after[d] - before[d];
            }
            let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
            if *grid.last().expect("non-empty") == time {
                *summaries.last_mut().expect("non-empty") = mean;
            } else {
                grid.push(time);
                summaries.push(mean);
            }
        }
        SummaryFlow { grid, summaries }
    }

    /// Fraction of particles with exactly `n` jumps on `[0, T]`.
    pub fn jump_count_distribution(&self) -> JumpCountHistogram {
        let max = self.trajectories.iter().map(Trajectory::jump_count).max().unwrap_or(0);
        let mut counts = vec![0usize; max + 1];
        for tr in &self.trajectories {
            counts[tr.jump_count()] += 1;
        }
        JumpCountHistogram { counts, particles: self.particles(), horizon: self.horizon() }
    }
}

/// Histogram of per-particle jump counts on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpCountHistogram {
    pub counts: Vec<usize>,
    pub particles: usize,
    pub horizon: f64,
}

impl JumpCountHistogram {
    /// Empirical `P̂(Ω_n)` with its binomial standard error.
    pub fn probability(&self, n: usize) -> Estimate {
        Estimate::proportion(self.counts.get(n).copied().unwrap_or(0), self.particles)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.particles as f64).collect()
    }

    /// `P(Poisson(rate·T) >= n)`: bound on the chance of `n` or more jumps
    /// when every candidate clock runs at `rate`.
    pub fn poisson_tail_bound(&self, rate: f64, n: usize) -> f64 {
        poisson_tail(rate * self.horizon, n)
    }

    /// `(rate·T)^n / n! · exp(−floor·T)`, the envelope for exactly `n`
    /// jumps when the total rate lies in `[floor, rate]`.
    pub fn envelope(&self, rate: f64, floor: f64, n: usize) -> f64 {
        let log_fact: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
        let rt = rate * self.horizon;
        let log_power = if n == 0 { 0.0 } else { n as f64 * rt.ln() };
        (log_power - log_fact - floor * self.horizon).exp()
    }
}

/// Exact one-step probabilities for a particle whose intensities over
/// `[t, t + δ]` are fixed by its frozen past.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneJumpProbabilities {
    /// Exactly one jump on `[t, t + δ]`, and it is an arrival.
    pub up: f64,
    /// Exactly one jump, and it is a service.
    pub down: f64,
    /// No jump.
    pub none: f64,
    /// The first jump in the window is an arrival.
    pub first_up: f64,
    /// The first jump in the window is a service.
    pub first_down: f64,
}

/// A frozen-delay particle's past up to time `t` together with the
/// recorded flow: enough to continue it over `[t, t + δ]` with `δ <= h`.
#[derive(Debug, Clone)]
pub struct FrozenHistory {
    past: Trajectory,
    grid: Vec<f64>,
    recorded: Vec<MeasureSummary>,
    h: f64,
}

impl FrozenHistory {
    /// `past` must end at `now = past.horizon()`; `flow` must cover `[0, now]`.
    pub fn new(past: Trajectory, flow: &MeasureFlow, h: f64, kernel: &IntensityKernel) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidConfig(format!("delay h = {h} must be positive")));
        }
        if flow.horizon() < past.horizon() - h {
            return Err(Error::SchemeViolation("recorded flow does not cover the history".into()));
        }
        let summary = flow.summarize(kernel);
        Ok(FrozenHistory { past, grid: summary.grid, recorded: summary.summaries, h })
    }

    /// History of particle `particle` of a frozen-delay system, cut at `now`.
    pub fn from_system(system: &ParticleSystem, particle: usize, now: f64, kernel: &IntensityKernel) -> Result<Self> {
        let h = match system.config().mode {
            SimMode::FrozenDelay { h } => h,
            _ => return Err(Error::InvalidConfig("history requires a FrozenDelay system".into())),
        };
        let traj = system
            .trajectories()
            .get(particle)
            .ok_or_else(|| Error::InvalidConfig(format!("no particle {particle}")))?;
        if now > system.horizon() || now < 0.0 {
            return Err(Error::TimeOutOfRange { t: now, horizon: system.horizon() });
        }
        let events: Vec<_> = traj.events().iter().copied().filter(|e| e.time <= now).collect();
        let past = Trajectory::new(traj.initial(), events, now)?;
        FrozenHistory::new(past, system.recorded_flow(), h, kernel)
    }

    pub fn now(&self) -> f64 {
        self.past.horizon()
    }

    pub fn current_state(&self) -> State {
        self.past.state_at_unchecked(self.now())
    }

    fn view<'a>(&'a self, kernel: &'a IntensityKernel) -> DelayedView<'a> {
        DelayedView {
            kernel,
            grid: &self.grid,
            recorded: &self.recorded,
            completed_until: self.now(),
            h: self.h,
            offset: 0.0,
        }
    }

    fn check_window(&self, delta: f64) -> Result<()> {
        if !(delta >= 0.0) {
            return Err(Error::NegativeDuration(delta));
        }
        if delta > self.h * (1.0 + 1e-12) {
            return Err(Error::SchemeViolation(format!(
                "window δ = {delta} exceeds the delay h = {}; history not frozen",
                self.h
            )));
        }
        Ok(())
    }

    /// Runs the thinning step of the frozen scheme over `[now, now + δ]`
    /// and returns the jumps it produced.
    pub fn sample_continuation<R: Rng>(&self, kernel: &IntensityKernel, delta: f64, rng: &mut R) -> Result<Vec<TrajectoryEvent>> {
        self.check_window(delta)?;
        let mut track = Track::from_trajectory(&self.past);
        let before = track.events.len();
        let view = self.view(kernel);
        let now = self.now();
        thin_interval(&mut track, now, now + delta, kernel.bounds().total_bar, rng, |t, tr, _| view.rates(t, tr))?;
        Ok(track.events.split_off(before))
    }

    /// Exact no-jump and single-jump probabilities on `[now, now + δ]` by
    /// trapezoidal quadrature with `steps` subintervals (at least 10).
    ///
    /// With the past frozen, `Λ±` are deterministic functions of time on the
    /// window, except that services need a nonempty current queue: the
    /// integrated total rate before and after a jump is taken at the queue
    /// length that holds on each side of it.
    pub fn one_jump_probabilities(&self, kernel: &IntensityKernel, delta: f64, steps: usize) -> Result<OneJumpProbabilities> {
        self.check_window(delta)?;
        if delta == 0.0 {
            return Ok(OneJumpProbabilities { up: 0.0, down: 0.0, none: 1.0, first_up: 0.0, first_down: 0.0 });
        }
        if steps < 10 {
            return Err(Error::Quadrature(format!("step δ/{steps} is coarser than δ/10")));
        }
        let now = self.now();
        let k = self.current_state().k();
        let track = Track::from_trajectory(&self.past);
        let view = self.view(kernel);
        let step = delta / steps as f64;
        let mut ups = Vec::with_capacity(steps + 1);
        let mut downs = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let t = if i == steps { now + delta } else { now + i as f64 * step };
            let (up, down) = view.rates(t, &track)?;
            ups.push(up);
            downs.push(down);
        }
        let total_at = |count: u32, i: usize| ups[i] + if count > 0 { downs[i] } else { 0.0 };
        // cumulative ∫_now^{s_i} Λ̄ at queue length `count`
        let cumulative = |count: u32| {
            let mut acc = vec![0.0; steps + 1];
            for i in 1..=steps {
                acc[i] = acc[i - 1] + 0.5 * step * (total_at(count, i - 1) + total_at(count, i));
            }
            acc
        };
        let before = cumulative(k);
        let after_up = cumulative(k + 1);
        let after_down = if k > 0 { cumulative(k - 1) } else { vec![0.0; steps + 1] };
        let trapezoid = |f: &dyn Fn(usize) -> f64| (0..steps).map(|i| 0.5 * step * (f(i) + f(i + 1))).sum::<f64>();
        let up = trapezoid(&|i| ups[i] * (-(before[i] + after_up[steps] - after_up[i])).exp());
        let first_up = trapezoid(&|i| ups[i] * (-before[i]).exp());
        let (down, first_down) = if k > 0 {
            (
                trapezoid(&|i| downs[i] * (-(before[i] + after_down[steps] - after_down[i])).exp()),
                trapezoid(&|i| downs[i] * (-before[i]).exp()),
            )
        } else {
            (0.0, 0.0)
        };
        Ok(OneJumpProbabilities { up, down, none: (-before[steps]).exp(), first_up, first_down })
    }
}
