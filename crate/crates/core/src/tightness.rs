//! Empirical tightness diagnostics over a family of frozen-delay systems:
//! uniform boundedness in probability (`sup_t P(|X_t| > c)`) and uniform
//! stochastic equicontinuity (`sup_{|t−s| <= w} P(ρ(X_t, X_s) > ε)`), with
//! `|X| = k + x + y`. The tables are diagnostics over a finite family, not
//! verdicts on the limits.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulator::ParticleSystem;
use crate::state::State;
use crate::stats::{poisson_quantile, Estimate};

/// One simulated member of the family, labelled by its delay `h`.
pub struct SchemeMember<'a> {
    pub h: f64,
    pub system: &'a ParticleSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sko1Entry {
    pub h: f64,
    pub c: f64,
    /// `max_t P̂(|X_t| > c)` over the recording grid.
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sko1Table {
    pub entries: Vec<Sko1Entry>,
    /// `(c, max over h)`.
    pub column_max: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sko2Entry {
    pub h: f64,
    pub window: f64,
    /// `max P̂(ρ(X_t, X_s) > ε)` over grid pairs with `0 < t − s <= window`.
    pub value: f64,
    pub se: f64,
    /// `total_bar·window` when `2·window < ε` (jumps only), else `None`.
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sko2Table {
    pub epsilon: f64,
    pub entries: Vec<Sko2Entry>,
}

impl Sko2Table {
    /// Every bounded entry satisfies `value <= bound + 3·se`.
    pub fn within_bounds(&self) -> bool {
        self.entries.iter().all(|e| e.bound.is_none_or(|b| e.value <= b + 3.0 * e.se))
    }
}

/// `c₀ + 2T + q`, where `c₀` bounds `|X₀|`, and `q` is the 0.995 quantile of
/// `Poisson(lambda_bar·T)`, which dominates the number of arrivals.
pub fn derived_level(c0: f64, horizon: f64, lambda_bar: f64) -> f64 {
    c0 + 2.0 * horizon + poisson_quantile(lambda_bar * horizon, 0.995) as f64
}

fn check_family(family: &[SchemeMember<'_>]) -> Result<()> {
    let first = family.first().ok_or_else(|| Error::InvalidConfig("empty family".into()))?;
    let (t, n) = (first.system.horizon(), first.system.particles());
    if family.iter().any(|m| m.system.horizon() != t || m.system.particles() != n) {
        return Err(Error::InvalidConfig("all systems must share the horizon and particle count".into()));
    }
    Ok(())
}

fn grid_states(system: &ParticleSystem) -> Vec<Vec<State>> {
    system.grid().iter().map(|&t| system.states_at(t).expect("grid within horizon")).collect()
}

/// `sup_t P̂(|X^h_t| > c)` per member and level.
pub fn sko1_diagnostic(family: &[SchemeMember<'_>], levels: &[f64]) -> Result<Sko1Table> {
    check_family(family)?;
    let mut entries = Vec::with_capacity(family.len() * levels.len());
    for member in family {
        let n = member.system.particles();
        let norms: Vec<Vec<f64>> = grid_states(member.system)
            .into_iter()
            .map(|states| states.iter().map(State::norm).collect())
            .collect();
        for &c in levels {
            let worst = norms
                .par_iter()
                .map(|row| row.iter().filter(|&&v| v > c).count())
                .max()
                .unwrap_or(0);
            let est = Estimate::proportion(worst, n);
            entries.push(Sko1Entry { h: member.h, c, value: est.mean, se: est.se });
        }
    }
    let column_max = levels
        .iter()
        .map(|&c| (c, entries.iter().filter(|e| e.c == c).map(|e| e.value).fold(0.0, f64::max)))
        .collect();
    Ok(Sko1Table { entries, column_max })
}

/// `max P̂(ρ(X_t, X_s) > ε)` over grid pairs `0 < t − s <= window` per member
/// and window.
pub fn sko2_diagnostic(family: &[SchemeMember<'_>], windows: &[f64], epsilon: f64, total_bar: f64) -> Result<Sko2Table> {
    check_family(family)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon = {epsilon} must be > 0")));
    }
    let mut entries = Vec::with_capacity(family.len() * windows.len());
    for member in family {
        let system = member.system;
        let n = system.particles();
        let grid = system.grid();
        let states = grid_states(system);
        for &window in windows {
            if !(window >= 0.0) {
                return Err(Error::InvalidConfig(format!("window {window} must be >= 0")));
            }
            let worst = (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    let mut worst = 0usize;
                    for j in (i + 1)..grid.len() {
                        if grid[j] - grid[i] > window * (1.0 + 1e-9) {
                            break;
                        }
                        let count = states[i].iter().zip(&states[j]).filter(|(a, b)| a.distance(b) > epsilon).count();
                        worst = worst.max(count);
                    }
                    worst
                })
                .max()
                .unwrap_or(0);
            let est = Estimate::proportion(worst, n);
            let bound = (2.0 * window < epsilon).then_some(total_bar * window);
            entries.push(Sko2Entry { h: member.h, window, value: est.mean, se: est.se, bound });
        }
    }
    Ok(Sko2Table { epsilon, entries })
}
