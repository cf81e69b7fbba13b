//! Path densities between the laws induced by two measure flows.
//!
//! For a trajectory with jumps at `t_1 < … < t_n`,
//!
//! ```text
//! log ρ_T = Σ_i [ln Λ±[t_i, X_{t_i−}, μ²_{t_i}] − ln Λ±[t_i, X_{t_i−}, μ¹_{t_i}]]
//!           − ∫_0^T (Λ̄[t, X_t, μ²_t] − Λ̄[t, X_t, μ¹_t]) dt
//! ```
//!
//! with the sign of each `Λ±` matching the jump type and `Λ̄ = Λ⁺ + Λ⁻`.
//! `ρ_T` is the density of the path law under `μ²` with respect to the law
//! under `μ¹`; it is only defined when the intensities are bounded away
//! from zero. Total variation uses the mass-2 convention: values lie in
//! `[0, 2]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{cell_differences, tv_distance_proxy, Cell, CellScheme, EmpiricalMeasure, IntensityKernel, MeasureFlow, SummaryFlow};
use crate::simulator::{ParticleSystem, SimMode};
use crate::state::{JumpType, State, Trajectory};
use crate::stats::Estimate;

/// `log ρ_T` of one trajectory with its parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathDensity {
    pub log_rho: f64,
    /// `ln Λ²(t_i) − ln Λ¹(t_i)` per jump.
    pub jump_terms: Vec<f64>,
    /// `−∫ (Λ̄² − Λ̄¹) dt`.
    pub integral_term: f64,
}

impl PathDensity {
    pub fn rho(&self) -> f64 {
        self.log_rho.exp()
    }
}

/// Evaluates path densities of many trajectories against a fixed pair of
/// flows.
pub struct DensityEvaluator<'a> {
    kernel: &'a IntensityKernel,
    flow1: SummaryFlow,
    flow2: SummaryFlow,
    /// Union of both flow grids.
    nodes: Vec<f64>,
    time_offset: f64,
}

impl<'a> DensityEvaluator<'a> {
    pub fn new(kernel: &'a IntensityKernel, flow1: &MeasureFlow, flow2: &MeasureFlow) -> Result<Self> {
        if !kernel.bounds().bounded_below() {
            return Err(Error::DensityUndefined("intensities are not bounded away from zero".into()));
        }
        let (flow1, flow2) = (flow1.summarize(kernel), flow2.summarize(kernel));
        let mut nodes: Vec<f64> = flow1.grid().iter().chain(flow2.grid()).copied().collect();
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        Ok(DensityEvaluator { kernel, flow1, flow2, nodes, time_offset: 0.0 })
    }

    /// Kernel time of local time 0, for systems simulated with an offset.
    pub fn with_time_offset(mut self, offset: f64) -> Self {
        self.time_offset = offset;
        self
    }

    pub fn log_density(&self, traj: &Trajectory) -> Result<PathDensity> {
        self.log_density_until(traj, traj.horizon())
    }

    /// `log ρ_t` of the path restricted to `[0, t]`.
    pub fn log_density_until(&self, traj: &Trajectory, t: f64) -> Result<PathDensity> {
        if !(0.0..=traj.horizon()).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon: traj.horizon() });
        }
        let horizon = self.flow1.horizon().min(self.flow2.horizon());
        if t > horizon {
            return Err(Error::InvalidFlow(format!("flows end at {horizon}, before {t}")));
        }
        let offset = self.time_offset;
        let mut jump_terms = Vec::new();
        for ev in traj.events().iter().take_while(|e| e.time <= t) {
            let rate = |flow: &SummaryFlow| self.kernel.rate(ev.kind, offset + ev.time, &ev.pre, flow.at(ev.time));
            let (r1, r2) = (rate(&self.flow1), rate(&self.flow2));
            if !(r1 > 0.0 && r2 > 0.0) {
                let side = if ev.kind == JumpType::Arrival { "+" } else { "-" };
                return Err(Error::DensityUndefined(format!(
                    "Λ{side} = {r1} / {r2} at the jump at t = {}",
                    ev.time
                )));
            }
            jump_terms.push(r2.ln() - r1.ln());
        }

        let mut nodes: Vec<f64> = self.nodes.iter().copied().take_while(|&s| s < t).collect();
        nodes.extend(traj.events().iter().map(|e| e.time).take_while(|&s| s < t));
        nodes.push(t);
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        let diff = |s: f64, x: &State, m1: &[f64], m2: &[f64]| {
            let (up1, down1) = self.kernel.rates(offset + s, x, m1);
            let (up2, down2) = self.kernel.rates(offset + s, x, m2);
            (up2 + down2) - (up1 + down1)
        };
        let mut integral = 0.0;
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let xa = traj.state_at_unchecked(a);
            let xb = xa.drifted(b - a);
            // both flows are constant on [a, b)
            let (m1, m2) = (self.flow1.at(a), self.flow2.at(a));
            integral += 0.5 * (b - a) * (diff(a, &xa, m1, m2) + diff(b, &xb, m1, m2));
        }
        let integral_term = -integral;
        let log_rho = jump_terms.iter().sum::<f64>() + integral_term;
        Ok(PathDensity { log_rho, jump_terms, integral_term })
    }

    /// `ρ_t` for every trajectory of a system.
    fn log_densities(&self, system: &ParticleSystem, t: f64) -> Result<Vec<f64>> {
        system
            .trajectories()
            .par_iter()
            .map(|traj| self.log_density_until(traj, t).map(|d| d.log_rho))
            .collect()
    }
}

/// `log ρ_T` of `traj` for the law under `flow2` against the law under `flow1`.
pub fn log_density(traj: &Trajectory, kernel: &IntensityKernel, flow1: &MeasureFlow, flow2: &MeasureFlow) -> Result<PathDensity> {
    DensityEvaluator::new(kernel, flow1, flow2)?.log_density(traj)
}

fn require_given(system: &ParticleSystem, flow1: &MeasureFlow) -> Result<()> {
    match &system.config().mode {
        SimMode::GivenFlow(f) if **f == *flow1 => Ok(()),
        _ => Err(Error::InvalidConfig("system must be simulated in GivenFlow mode under flow1".into())),
    }
}

/// `Ê ρ_T` over a system simulated under `flow1`; equals 1 up to Monte-Carlo
/// error.
pub fn normalization_check(
    system: &ParticleSystem,
    kernel: &IntensityKernel,
    flow1: &MeasureFlow,
    flow2: &MeasureFlow,
) -> Result<Estimate> {
    require_given(system, flow1)?;
    let evaluator = DensityEvaluator::new(kernel, flow1, flow2)?.with_time_offset(system.config().time_offset);
    let rho: Vec<f64> = evaluator.log_densities(system, system.horizon())?.into_iter().map(f64::exp).collect();
    Ok(Estimate::from_samples(&rho))
}

/// `ψ̂_t = 2 − 2·Ê(ρ_t ∧ 1)`, an estimate of the path-law TV distance on `[0, t]`.
fn psi_at(
    system: &ParticleSystem,
    kernel: &IntensityKernel,
    flow1: &MeasureFlow,
    flow2: &MeasureFlow,
    t: f64,
) -> Result<Estimate> {
    require_given(system, flow1)?;
    let evaluator = DensityEvaluator::new(kernel, flow1, flow2)?.with_time_offset(system.config().time_offset);
    let psi: Vec<f64> = evaluator
        .log_densities(system, t)?
        .into_iter()
        .map(|l| 2.0 - 2.0 * l.exp().min(1.0))
        .collect();
    Ok(Estimate::from_samples(&psi))
}

/// `ψ̂_T` over a system simulated under `flow1`.
pub fn psi_estimate(
    system: &ParticleSystem,
    kernel: &IntensityKernel,
    flow1: &MeasureFlow,
    flow2: &MeasureFlow,
) -> Result<Estimate> {
    psi_at(system, kernel, flow1, flow2, system.horizon())
}

/// Marginal distance `φ̂_t` against the path distance `ψ̂_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalTvCheck {
    pub t: f64,
    pub phi: f64,
    pub phi_se: f64,
    pub psi: f64,
    pub psi_se: f64,
    /// `sqrt(phi_se² + psi_se²)`.
    pub combined_se: f64,
    /// `φ̂ <= ψ̂ + 3·combined_se`.
    pub pass: bool,
}

/// Compares the TV proxy between the marginals at `t` of `system1` (under
/// `flow1`) and `system2` (under `flow2`) with `ψ̂_t`.
///
/// Particles are paired by index, so systems run from the same seed share
/// random numbers; `phi_se` is the delta-method standard error of the
/// paired cell differences.
pub fn marginal_tv_check(
    system1: &ParticleSystem,
    system2: &ParticleSystem,
    kernel: &IntensityKernel,
    flow1: &MeasureFlow,
    flow2: &MeasureFlow,
    t: f64,
    scheme: &CellScheme,
) -> Result<MarginalTvCheck> {
    require_given(system1, flow1)?;
    require_given(system2, flow2)?;
    if system1.horizon() != system2.horizon() {
        return Err(Error::InvalidConfig(format!(
            "horizons differ: {} vs {}",
            system1.horizon(),
            system2.horizon()
        )));
    }
    if system1.particles() != system2.particles() {
        return Err(Error::InvalidConfig("systems must have the same particle count".into()));
    }
    let (s1, s2) = (system1.states_at(t)?, system2.states_at(t)?);
    let (m1, m2) = (EmpiricalMeasure::uniform(s1.clone())?, EmpiricalMeasure::uniform(s2.clone())?);
    // sign of μ1(c) − μ2(c) per cell, then Z_i = s(cell1_i) − s(cell2_i)
    let signs = cell_differences(&m1, &m2, scheme);
    let phi: f64 = signs.iter().map(|(_, d)| d.abs()).sum();
    let sign = |c: Cell| {
        let i = signs.binary_search_by(|(k, _)| k.cmp(&c)).expect("cell present");
        let d = signs[i].1;
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let z: Vec<f64> = s1
        .iter()
        .zip(&s2)
        .map(|(a, b)| {
            let (ca, cb) = (scheme.cell(a), scheme.cell(b));
            if ca == cb {
                0.0
            } else {
                sign(ca) - sign(cb)
            }
        })
        .collect();
    let phi_se = Estimate::from_samples(&z).se;
    let psi = psi_at(system1, kernel, flow1, flow2, t)?;
    let combined_se = (phi_se * phi_se + psi.se * psi.se).sqrt();
    Ok(MarginalTvCheck {
        t,
        phi,
        phi_se,
        psi: psi.mean,
        psi_se: psi.se,
        combined_se,
        pass: phi <= psi.mean + 3.0 * combined_se,
    })
}

/// Per-jump check of `|ln Λ² − ln Λ¹| <= K·λ̄·½TV(μ²_{t_i}, μ¹_{t_i})`; returns
/// `(term, bound)` per jump. Catalog kernels see the measure through `k`
/// only, so the `k`-marginal distance is used, which is the smallest
/// distance the bound holds for.
pub fn check_jump_bounds(
    traj: &Trajectory,
    kernel: &IntensityKernel,
    flow1: &MeasureFlow,
    flow2: &MeasureFlow,
) -> Result<Vec<(f64, f64)>> {
    let density = log_density(traj, kernel, flow1, flow2)?;
    let bounds = kernel.bounds();
    let scheme = CellScheme::counts_only();
    traj.events()
        .iter()
        .zip(&density.jump_terms)
        .map(|(ev, term)| {
            let tv = tv_distance_proxy(flow2.flow_at(ev.time)?, flow1.flow_at(ev.time)?, &scheme);
            Ok((term.abs(), bounds.log_lipschitz * bounds.lambda_bar * 0.5 * tv))
        })
        .collect()
}
