//! The generator `L` and Monte-Carlo checks of Dynkin's identity and the
//! martingale problem.
//!
//! For `X = (k, x, y)` and a test function `g`,
//!
//! ```text
//! L(t, X', Y) g(X) = λ⁺(t, X', Y)(g(X⁺) − g(X)) + 1(k > 0) λ⁻(t, X', Y)(g(X⁻) − g(X))
//!                    + ∂ₓg(X) + 1(k > 0) ∂ᵧg(X)
//! ```
//!
//! and `L[t, X', μ] g(X)` is its average over `Y ~ μ`. Along a simulated
//! path the intensity arguments `(X', μ)` are whatever the simulator used:
//! the current state and measure, or their values at `(s − h)₊` in the
//! frozen-delay scheme.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{grid_index, EmpiricalMeasure, IntensityKernel, MeasureSummary, SummaryFlow};
use crate::simulator::{ParticleSystem, SimMode};
use crate::state::{JumpType, State, Trajectory};
use crate::stats::Estimate;

/// The `k`-dependent factor `φ(k)` of a product test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CountFactor {
    One,
    /// `e^{−k}`.
    ExpNeg,
    /// `min(k, cap)/cap`.
    Capped { cap: u32 },
    /// `1(k = k0)`.
    Bump { k0: u32 },
}

impl CountFactor {
    pub fn eval(&self, k: u32) -> f64 {
        match *self {
            CountFactor::One => 1.0,
            CountFactor::ExpNeg => (-(k as f64)).exp(),
            CountFactor::Capped { cap } => k.min(cap) as f64 / cap as f64,
            CountFactor::Bump { k0 } => {
                if k == k0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Test functions `g(k, x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum TestFunction {
    /// `scale · φ(k) · e^{−αx − βy}` with `α, β >= 0`.
    Product { scale: f64, factor: CountFactor, alpha: f64, beta: f64 },
    /// `g = x`; unbounded, for closed-form checks only.
    Elapsed,
}

impl TestFunction {
    pub fn product(scale: f64, factor: CountFactor, alpha: f64, beta: f64) -> Result<Self> {
        if !(scale.is_finite() && alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "test function needs finite scale and alpha, beta >= 0 (got {scale}, {alpha}, {beta})"
            )));
        }
        if let CountFactor::Capped { cap: 0 } = factor {
            return Err(Error::InvalidConfig("test function cap must be >= 1".into()));
        }
        Ok(TestFunction::Product { scale, factor, alpha, beta })
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::Product { scale: c, factor: CountFactor::One, alpha: 0.0, beta: 0.0 }
    }

    /// `g(k, ·, ·) = φ(k)`.
    pub fn of_count(factor: CountFactor) -> Self {
        TestFunction::Product { scale: 1.0, factor, alpha: 0.0, beta: 0.0 }
    }

    #[inline]
    pub fn eval(&self, s: &State) -> f64 {
        match *self {
            TestFunction::Product { scale, factor, alpha, beta } => {
                scale * factor.eval(s.k()) * (-alpha * s.x() - beta * s.y()).exp()
            }
            TestFunction::Elapsed => s.x(),
        }
    }

    #[inline]
    pub fn dx(&self, s: &State) -> f64 {
        match *self {
            TestFunction::Product { alpha, .. } => -alpha * self.eval(s),
            TestFunction::Elapsed => 1.0,
        }
    }

    #[inline]
    pub fn dy(&self, s: &State) -> f64 {
        match *self {
            TestFunction::Product { beta, .. } => -beta * self.eval(s),
            TestFunction::Elapsed => 0.0,
        }
    }

    /// `sup |g|`, infinite for unbounded functions.
    pub fn bound(&self) -> f64 {
        match *self {
            TestFunction::Product { scale, .. } => scale.abs(),
            TestFunction::Elapsed => f64::INFINITY,
        }
    }

    /// Largest discrepancy between the declared partials and central finite
    /// differences with step `step` at `s` (the `y` partial only when
    /// `k(s) > 0`, since `y` is pinned to 0 otherwise).
    pub fn partials_error(&self, s: &State, step: f64) -> Result<f64> {
        let at = |x: f64, y: f64| State::new(s.k(), x, y).map(|p| self.eval(&p));
        let lo_x = (s.x() - step).max(0.0);
        let fd_x = (at(s.x() + step, s.y())? - at(lo_x, s.y())?) / (s.x() + step - lo_x);
        let mut err = (fd_x - self.dx(s)).abs();
        if s.k() > 0 {
            let lo_y = (s.y() - step).max(0.0);
            let fd_y = (at(s.x(), s.y() + step)? - at(s.x(), lo_y)?) / (s.y() + step - lo_y);
            err = err.max((fd_y - self.dy(s)).abs());
        }
        Ok(err)
    }
}

/// Jump and drift terms of `L g(X)` given the two intensities.
#[inline]
fn generator_terms(up: f64, down: f64, g: &TestFunction, x: &State) -> f64 {
    let gx = g.eval(x);
    let mut value = up * (g.eval(&x.jump_up()) - gx) + g.dx(x);
    if !x.is_empty() {
        let below = x.jump_down().expect("k > 0");
        value += down * (g.eval(&below) - gx) + g.dy(x);
    }
    value
}

/// `L(t, X', Y) g(X)`.
pub fn apply_pointwise_generator(
    kernel: &IntensityKernel,
    t: f64,
    x_prime: &State,
    y: &State,
    g: &TestFunction,
    x: &State,
) -> f64 {
    let up = kernel.lambda(JumpType::Arrival, t, x_prime, y);
    let down = kernel.lambda(JumpType::Service, t, x_prime, y);
    generator_terms(up, down, g, x)
}

/// `L[t, X', μ] g(X)`: the μ-average of the pointwise generator, atom by atom.
pub fn apply_generator(
    kernel: &IntensityKernel,
    t: f64,
    x_prime: &State,
    mu: &EmpiricalMeasure,
    g: &TestFunction,
    x: &State,
) -> f64 {
    mu.atoms().iter().map(|(y, w)| w * apply_pointwise_generator(kernel, t, x_prime, y, g, x)).sum()
}

/// `L[t, X', μ] g(X)` from a kernel summary of `μ`.
#[inline]
pub fn apply_generator_summary(
    kernel: &IntensityKernel,
    t: f64,
    x_prime: &State,
    summary: &[f64],
    g: &TestFunction,
    x: &State,
) -> f64 {
    let (up, down) = kernel.rates(t, x_prime, summary);
    generator_terms(up, down, g, x)
}

/// Which intensity arguments enter `L` for a frozen-delay system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorVariant {
    /// `L(s, X_{(s−h)₊}, μ_{(s−h)₊})`: the intensities the scheme actually used.
    #[default]
    Delayed,
    /// `L(s, X_s, μ_s)` with the ensemble's own current measure: the
    /// identity expected only in the limit `h → 0`.
    Undelayed,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynkinOptions {
    pub variant: GeneratorVariant,
    /// Largest quadrature step; defaults to the recording step `Δ` and may
    /// not exceed it.
    pub max_step: Option<f64>,
}

/// `Π φ_k(X_{t_k})` over factors observed no later than `start`, times the
/// increment over `[start, end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableProduct {
    pub start: f64,
    pub end: f64,
    pub factors: Vec<(f64, TestFunction)>,
}

impl ObservableProduct {
    /// No factors: the statistic reduces to the Dynkin residual.
    pub fn plain(start: f64, end: f64) -> Self {
        ObservableProduct { start, end, factors: Vec::new() }
    }

    pub fn with_factor(mut self, time: f64, phi: TestFunction) -> Self {
        self.factors.push((time, phi));
        self
    }

    fn validate(&self, horizon: f64) -> Result<()> {
        if !(0.0 <= self.start && self.start < self.end && self.end <= horizon) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= t1 < t2 <= {horizon}, got [{}, {}]",
                self.start, self.end
            )));
        }
        if let Some((t, _)) = self.factors.iter().find(|(t, _)| !(0.0 <= *t && *t <= self.start)) {
            return Err(Error::InvalidConfig(format!("factor time {t} must lie in [0, {}]", self.start)));
        }
        Ok(())
    }

    fn weight(&self, traj: &Trajectory) -> f64 {
        self.factors.iter().map(|(t, phi)| phi.eval(&traj.state_at_unchecked(*t))).product()
    }
}

/// Exact running integral of a step-function summary, so a quadrature
/// segment can use the segment average of `μ_s`.
struct StepAverager {
    path: SummaryFlow,
    cumulative: Vec<MeasureSummary>,
}

impl StepAverager {
    fn new(path: SummaryFlow) -> Self {
        let dim = path.summaries.first().map_or(0, Vec::len);
        let mut cumulative = Vec::with_capacity(path.grid.len());
        let mut acc = vec![0.0; dim];
        cumulative.push(acc.clone());
        for i in 1..path.grid.len() {
            let dt = path.grid[i] - path.grid[i - 1];
            for (a, m) in acc.iter_mut().zip(&path.summaries[i - 1]) {
                *a += m * dt;
            }
            cumulative.push(acc.clone());
        }
        StepAverager { path, cumulative }
    }

    fn integral_to(&self, t: f64, out: &mut [f64]) {
        let i = grid_index(&self.path.grid, t);
        let dt = t - self.path.grid[i];
        for ((o, c), m) in out.iter_mut().zip(&self.cumulative[i]).zip(&self.path.summaries[i]) {
            *o = c + m * dt;
        }
    }

    fn average(&self, a: f64, b: f64, lo: &mut [f64], out: &mut [f64]) {
        self.integral_to(a, lo);
        self.integral_to(b, out);
        for (o, l) in out.iter_mut().zip(lo.iter()) {
            *o = (*o - l) / (b - a);
        }
    }
}

/// Mode-specific intensity arguments along a path.
enum Arguments<'a> {
    /// The measure is a step function on `path`; `X' = X_s`.
    Current(StepAverager),
    /// Frozen-delay arguments at `(s − h)₊`.
    Delayed { h: f64, grid: &'a [f64], recorded: SummaryFlow },
}

/// Everything needed to integrate `L g` along any particle of a system.
pub struct GeneratorPath<'a> {
    system: &'a ParticleSystem,
    kernel: &'a IntensityKernel,
    args: Arguments<'a>,
    /// Breakpoints shared by all particles (grids), sorted.
    common: Vec<f64>,
    max_step: f64,
}

impl<'a> GeneratorPath<'a> {
    pub fn new(system: &'a ParticleSystem, kernel: &'a IntensityKernel, options: &DynkinOptions) -> Result<Self> {
        let delta = system.config().grid_step;
        let max_step = options.max_step.unwrap_or(delta);
        if !(max_step > 0.0) || max_step > delta * (1.0 + 1e-12) {
            return Err(Error::Quadrature(format!(
                "quadrature step {max_step} is coarser than the recording step {delta}"
            )));
        }
        let mut common = system.grid().to_vec();
        let args = match (&system.config().mode, options.variant) {
            (SimMode::FrozenDelay { h }, GeneratorVariant::Delayed) => {
                let h = *h;
                common.extend(system.grid().iter().map(|s| s + h));
                common.push(h);
                Arguments::Delayed { h, grid: system.grid(), recorded: system.recorded_summary(kernel) }
            }
            (SimMode::GivenFlow(flow), _) => {
                let summary = flow.summarize(kernel);
                common.extend_from_slice(summary.grid());
                Arguments::Current(StepAverager::new(summary))
            }
            _ => Arguments::Current(StepAverager::new(system.ensemble_summary(kernel))),
        };
        common.retain(|&t| t <= system.horizon());
        common.sort_by(f64::total_cmp);
        common.dedup();
        Ok(GeneratorPath { system, kernel, args, common, max_step })
    }

    /// Quadrature nodes on `[t1, t2]` for one trajectory.
    fn nodes(&self, traj: &Trajectory, t1: f64, t2: f64) -> Vec<f64> {
        let mut nodes = vec![t1, t2];
        let inside = |t: f64| t > t1 && t < t2;
        let lo = self.common.partition_point(|&t| t <= t1);
        nodes.extend(self.common[lo..].iter().copied().take_while(|&t| t < t2));
        for ev in traj.events() {
            if inside(ev.time) {
                nodes.push(ev.time);
            }
            if let Arguments::Delayed { h, .. } = self.args {
                if inside(ev.time + h) {
                    nodes.push(ev.time + h);
                }
            }
        }
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        // the recording grid has step Δ, so only segments inside a
        // frozen-shifted or given grid can exceed max_step
        let mut refined = Vec::with_capacity(nodes.len());
        for w in nodes.windows(2) {
            refined.push(w[0]);
            let pieces = ((w[1] - w[0]) / self.max_step - 1e-9).ceil().max(1.0) as usize;
            for j in 1..pieces {
                refined.push(w[0] + (w[1] - w[0]) * j as f64 / pieces as f64);
            }
        }
        refined.push(t2);
        refined
    }

    /// `∫_{t1}^{t2} L[s, X*_s, μ*_s] g(X_s) ds` for one trajectory by the
    /// trapezoidal rule on segments free of jumps and of breakpoints of the
    /// intensity arguments.
    pub fn integral(&self, traj: &Trajectory, g: &TestFunction, t1: f64, t2: f64) -> f64 {
        let offset = self.system.config().time_offset;
        let nodes = self.nodes(traj, t1, t2);
        let dim = self.kernel.feature_dim();
        let mut lo = vec![0.0; dim];
        let mut avg = vec![0.0; dim];
        let mut total = 0.0;
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let xa = traj.state_at_unchecked(a);
            let xb = xa.drifted(b - a);
            let (fa, fb) = match &self.args {
                Arguments::Current(path) => {
                    path.average(a, b, &mut lo, &mut avg);
                    (
                        apply_generator_summary(self.kernel, offset + a, &xa, &avg, g, &xa),
                        apply_generator_summary(self.kernel, offset + b, &xb, &avg, g, &xb),
                    )
                }
                Arguments::Delayed { h, grid, recorded } => {
                    let (da, db) = ((a - h).max(0.0), (b - h).max(0.0));
                    let star_a = traj.state_at_unchecked(da);
                    let star_b = star_a.drifted(db - da);
                    let mu = recorded.at_index(grid_index(grid, da));
                    (
                        apply_generator_summary(self.kernel, offset + a, &star_a, mu, g, &xa),
                        apply_generator_summary(self.kernel, offset + b, &star_b, mu, g, &xb),
                    )
                }
            };
            total += 0.5 * (b - a) * (fa + fb);
        }
        total
    }

    /// `g(X_{t2}) − g(X_{t1}) − ∫ L g ds` for one trajectory.
    pub fn residual(&self, traj: &Trajectory, g: &TestFunction, t1: f64, t2: f64) -> f64 {
        g.eval(&traj.state_at_unchecked(t2)) - g.eval(&traj.state_at_unchecked(t1)) - self.integral(traj, g, t1, t2)
    }
}

/// Per-particle values of `(g(X_{t2}) − g(X_{t1}) − ∫ L g ds)·Π φ_k(X_{t_k})`.
pub fn martingale_samples(
    system: &ParticleSystem,
    kernel: &IntensityKernel,
    g: &TestFunction,
    obs: &ObservableProduct,
    options: &DynkinOptions,
) -> Result<Vec<f64>> {
    obs.validate(system.horizon())?;
    let path = GeneratorPath::new(system, kernel, options)?;
    Ok(system
        .trajectories()
        .par_iter()
        .map(|traj| {
            let weight = obs.weight(traj);
            if weight == 0.0 {
                0.0
            } else {
                weight * path.residual(traj, g, obs.start, obs.end)
            }
        })
        .collect())
}

/// Monte-Carlo estimate of the martingale-problem statistic; zero mean for a
/// correctly simulated system.
pub fn martingale_test(
    system: &ParticleSystem,
    kernel: &IntensityKernel,
    g: &TestFunction,
    obs: &ObservableProduct,
    options: &DynkinOptions,
) -> Result<Estimate> {
    Ok(Estimate::from_samples(&martingale_samples(system, kernel, g, obs, options)?))
}

/// Monte-Carlo estimate of `E[g(X_{t2}) − g(X_{t1}) − ∫_{t1}^{t2} L g ds]`
/// with the default options.
pub fn dynkin_residual(
    system: &ParticleSystem,
    kernel: &IntensityKernel,
    g: &TestFunction,
    t1: f64,
    t2: f64,
) -> Result<Estimate> {
    martingale_test(system, kernel, g, &ObservableProduct::plain(t1, t2), &DynkinOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{KernelSpec, MeasureFlow};
    use crate::simulator::{simulate, SimConfig};
    use proptest::prelude::*;

    fn st(k: u32, x: f64, y: f64) -> State {
        State::new(k, x, y).unwrap()
    }

    fn mixed_kernel() -> IntensityKernel {
        IntensityKernel::new(KernelSpec::sum(vec![
            KernelSpec::MeanfieldQueue { a0: 0.2, a1: 1.0, b0: 0.1, b1: 0.7, k_max: 3 },
            KernelSpec::AgeService { a: 0.4, b0: 0.2, b1: 1.1 },
        ]))
        .unwrap()
    }

    fn catalog() -> Vec<TestFunction> {
        vec![
            TestFunction::constant(2.0),
            TestFunction::product(1.0, CountFactor::ExpNeg, 0.0, 0.0).unwrap(),
            TestFunction::product(1.0, CountFactor::One, 0.7, 0.0).unwrap(),
            TestFunction::product(2.0, CountFactor::Capped { cap: 3 }, 0.2, 0.9).unwrap(),
            TestFunction::product(1.0, CountFactor::Bump { k0: 1 }, 0.5, 0.5).unwrap(),
        ]
    }

    #[test]
    fn constants_are_harmonic() {
        let kernel = IntensityKernel::meanfield_queue(1.0, 1.0, 1.0, 1.0, 3).unwrap();
        let g = TestFunction::constant(3.5);
        for x in [st(0, 1.0, 0.0), st(2, 0.3, 0.4)] {
            assert_eq!(apply_pointwise_generator(&kernel, 0.0, &x, &st(1, 0.0, 0.0), &g, &x), 0.0);
        }
    }

    #[test]
    fn elapsed_time_at_empty_queue() {
        let a = 1.7;
        let kernel = IntensityKernel::constant(a, 4.0).unwrap();
        let x = st(0, 2.5, 0.0);
        let value = apply_pointwise_generator(&kernel, 0.0, &x, &x, &TestFunction::Elapsed, &x);
        assert!((value - (a * (0.0 - 2.5) + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn exp_count_with_constant_rates() {
        let (a, b) = (1.3, 0.6);
        let kernel = IntensityKernel::constant(a, b).unwrap();
        let x = st(2, 0.4, 0.1);
        let g = TestFunction::of_count(CountFactor::ExpNeg);
        let e = |k: f64| (-k).exp();
        let expected = a * (e(3.0) - e(2.0)) + b * (e(1.0) - e(2.0));
        let value = apply_pointwise_generator(&kernel, 0.0, &x, &st(0, 0.0, 0.0), &g, &x);
        assert!((value - expected).abs() < 1e-15);
    }

    #[test]
    fn generator_of_measures() {
        let kernel = IntensityKernel::meanfield_queue(0.5, 1.0, 0.3, 2.0, 2).unwrap();
        let g = TestFunction::product(1.0, CountFactor::Capped { cap: 4 }, 0.3, 0.2).unwrap();
        let x = st(1, 0.2, 0.7);
        let (y1, y2) = (st(0, 1.0, 0.0), st(3, 0.0, 0.5));
        let point = apply_pointwise_generator(&kernel, 0.0, &x, &y1, &g, &x);
        assert_eq!(apply_generator(&kernel, 0.0, &x, &EmpiricalMeasure::dirac(y1), &g, &x), point);
        let mu = EmpiricalMeasure::new(vec![(y1, 0.25), (y2, 0.75)]).unwrap();
        let mixed = 0.25 * point + 0.75 * apply_pointwise_generator(&kernel, 0.0, &x, &y2, &g, &x);
        assert!((apply_generator(&kernel, 0.0, &x, &mu, &g, &x) - mixed).abs() < 1e-12);
        let fast = apply_generator_summary(&kernel, 0.0, &x, &kernel.summarize(&mu), &g, &x);
        assert!((fast - mixed).abs() < 1e-12);

        let constant = IntensityKernel::constant(1.0, 2.0).unwrap();
        let a = apply_generator(&constant, 0.0, &x, &mu, &g, &x);
        let b = apply_generator(&constant, 0.0, &x, &EmpiricalMeasure::dirac(y2), &g, &x);
        assert!((a - b).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn declared_partials_match_finite_differences(k in 0u32..6, x in 0.0f64..4.0, y in 0.0f64..4.0) {
            let s = State::new(k, x, y).unwrap();
            for g in catalog() {
                prop_assert!(g.partials_error(&s, 1e-6).unwrap() < 1e-5);
            }
        }

        #[test]
        fn generator_is_the_average_of_pointwise_values(
            atoms in proptest::collection::vec((0u32..6, 0.0f64..2.0, 0.0f64..2.0, 0.05f64..1.0), 1..8),
            k in 0u32..5, x in 0.0f64..2.0, y in 0.0f64..2.0,
        ) {
            let total: f64 = atoms.iter().map(|a| a.3).sum();
            let mu = EmpiricalMeasure::new(
                atoms.iter().map(|&(k, x, y, w)| (State::new(k, x, y).unwrap(), w / total)).collect(),
            ).unwrap();
            let kernel = mixed_kernel();
            let s = State::new(k, x, y).unwrap();
            for g in catalog() {
                let direct: f64 = mu.atoms().iter().map(|(a, w)| w * apply_pointwise_generator(&kernel, 0.0, &s, a, &g, &s)).sum();
                prop_assert!((apply_generator(&kernel, 0.0, &s, &mu, &g, &s) - direct).abs() < 1e-12);
                let fast = apply_generator_summary(&kernel, 0.0, &s, &kernel.summarize(&mu), &g, &s);
                prop_assert!((fast - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trivial_residuals_vanish_per_particle() {
        let quiet = IntensityKernel::constant(0.0, 0.0).unwrap();
        let system = simulate(&SimConfig::new(50, 2.0, SimMode::SelfConsistent, 1), &quiet).unwrap();
        let samples = martingale_samples(
            &system,
            &quiet,
            &TestFunction::Elapsed,
            &ObservableProduct::plain(0.3, 1.7),
            &DynkinOptions::default(),
        )
        .unwrap();
        assert!(samples.iter().all(|r| r.abs() < 1e-12));

        let busy = IntensityKernel::meanfield_queue(1.0, 1.0, 1.0, 1.0, 3).unwrap();
        for mode in [SimMode::SelfConsistent, SimMode::FrozenDelay { h: 0.2 }] {
            let system = simulate(&SimConfig::new(50, 2.0, mode, 2), &busy).unwrap();
            let est = dynkin_residual(&system, &busy, &TestFunction::constant(4.0), 0.0, 2.0).unwrap();
            assert_eq!((est.mean, est.se), (0.0, 0.0));
        }
    }

    #[test]
    fn quadrature_coarser_than_grid_is_rejected() {
        let kernel = IntensityKernel::constant(1.0, 1.0).unwrap();
        let system = simulate(&SimConfig::new(10, 1.0, SimMode::SelfConsistent, 1), &kernel).unwrap();
        let options = DynkinOptions { max_step: Some(0.05), ..Default::default() };
        let g = TestFunction::of_count(CountFactor::ExpNeg);
        let err = martingale_test(&system, &kernel, &g, &ObservableProduct::plain(0.0, 1.0), &options).unwrap_err();
        assert!(matches!(err, Error::Quadrature(_)));
        let finer = DynkinOptions { max_step: Some(0.001), ..Default::default() };
        martingale_test(&system, &kernel, &g, &ObservableProduct::plain(0.0, 1.0), &finer).unwrap();
    }

    #[test]
    fn observable_times_are_validated() {
        let kernel = IntensityKernel::constant(1.0, 1.0).unwrap();
        let system = simulate(&SimConfig::new(10, 1.0, SimMode::SelfConsistent, 1), &kernel).unwrap();
        let g = TestFunction::constant(1.0);
        let opts = DynkinOptions::default();
        assert!(martingale_test(&system, &kernel, &g, &ObservableProduct::plain(0.5, 0.5), &opts).is_err());
        assert!(martingale_test(&system, &kernel, &g, &ObservableProduct::plain(0.5, 1.5), &opts).is_err());
        let late = ObservableProduct::plain(0.5, 1.0).with_factor(0.7, g);
        assert!(martingale_test(&system, &kernel, &g, &late, &opts).is_err());
    }

    #[test]
    fn unit_factors_reduce_to_the_dynkin_residual() {
        let kernel = IntensityKernel::meanfield_queue(0.5, 1.0, 0.6, 0.8, 4).unwrap();
        let system = simulate(&SimConfig::new(300, 1.0, SimMode::SelfConsistent, 5), &kernel).unwrap();
        let g = TestFunction::product(1.0, CountFactor::ExpNeg, 0.3, 0.1).unwrap();
        let plain = dynkin_residual(&system, &kernel, &g, 0.2, 0.9).unwrap();
        let ones = ObservableProduct::plain(0.2, 0.9)
            .with_factor(0.1, TestFunction::constant(1.0))
            .with_factor(0.2, TestFunction::constant(1.0));
        let weighted = martingale_test(&system, &kernel, &g, &ones, &DynkinOptions::default()).unwrap();
        assert_eq!(plain, weighted);
    }

    #[test]
    fn given_flow_breakpoints_are_exact_for_piecewise_constant_rates() {
        // A two-level flow drives the arrival rate from 0.2 to 1.2 at t = 0.5;
        // for g = x and an empty queue the integral is exact under drift.
        let kernel = IntensityKernel::meanfield_queue(0.2, 1.0, 0.0, 0.0, 1).unwrap();
        let empty = EmpiricalMeasure::dirac(State::ZERO);
        let full = EmpiricalMeasure::dirac(st(1, 0.0, 0.0));
        let flow = MeasureFlow::new(vec![0.0, 0.5, 1.0], vec![empty, full.clone(), full]).unwrap();
        let system = simulate(&SimConfig::new(2000, 1.0, SimMode::given(flow), 3), &kernel).unwrap();
        let est = dynkin_residual(&system, &kernel, &TestFunction::Elapsed, 0.0, 1.0).unwrap();
        assert!(est.within(0.0, 4.0), "{est:?}");
    }
}
