use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::kernel::{IntensityKernel, MeasureSummary};
use crate::state::State;

const WEIGHT_TOLERANCE: f64 = 1e-12;

/// Finitely supported probability measure on the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<(State, f64)>,
}

impl EmpiricalMeasure {
    /// Weights must be nonnegative and sum to one within 1e-12.
    pub fn new(atoms: Vec<(State, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        if let Some((_, w)) = atoms.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("weight {w} must be finite and >= 0")));
        }
        let total = compensated_sum(atoms.iter().map(|a| a.1));
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Ok(EmpiricalMeasure { atoms })
    }

    /// Uniform measure over `states`, each with weight `1/N`.
    pub fn uniform(states: Vec<State>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        let w = 1.0 / states.len() as f64;
        Ok(EmpiricalMeasure { atoms: states.into_iter().map(|s| (s, w)).collect() })
    }

    pub fn dirac(state: State) -> Self {
        EmpiricalMeasure { atoms: vec![(state, 1.0)] }
    }

    /// `α·μ1 + (1 − α)·μ2`.
    pub fn mixture(alpha: f64, mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidMeasure(format!("mixture weight {alpha} outside [0, 1]")));
        }
        let atoms = mu1
            .atoms
            .iter()
            .map(|(s, w)| (*s, alpha * w))
            .chain(mu2.atoms.iter().map(|(s, w)| (*s, (1.0 - alpha) * w)))
            .collect();
        EmpiricalMeasure::new(atoms)
    }

    pub fn atoms(&self) -> &[(State, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `Σ w_j f(Y_j)`.
    pub fn expect(&self, f: impl Fn(&State) -> f64) -> f64 {
        self.atoms.iter().map(|(s, w)| w * f(s)).sum()
    }

    /// Mass per customer count, indexed by `k`.
    pub fn count_distribution(&self) -> Vec<f64> {
        let k_max = self.atoms.iter().map(|(s, _)| s.k()).max().unwrap_or(0) as usize;
        let mut p = vec![0.0; k_max + 1];
        for (s, w) in &self.atoms {
            p[s.k() as usize] += w;
        }
        p
    }
}

fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Partition of the state space used by the total-variation proxy: `k`
/// exactly, `x` and `y` in cells of `width`, with one overflow cell per axis
/// beyond `x_cells`/`y_cells`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellScheme {
    pub width: f64,
    pub x_cells: u32,
    pub y_cells: u32,
}

impl Default for CellScheme {
    fn default() -> Self {
        CellScheme { width: 0.25, x_cells: 400, y_cells: 400 }
    }
}

/// Cell index `(k, x_bin, y_bin)`.
pub type Cell = (u32, u32, u32);

impl CellScheme {
    pub fn new(width: f64, x_cells: u32, y_cells: u32) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidConfig(format!("cell width {width} must be positive")));
        }
        Ok(CellScheme { width, x_cells, y_cells })
    }

    /// Cells of `width` covering `[0, extent)` on both continuous axes.
    pub fn covering(width: f64, extent: f64) -> Result<Self> {
        let cells = (extent / width).ceil().max(1.0);
        if cells > u32::MAX as f64 {
            return Err(Error::InvalidConfig(format!("{cells} cells exceed the index range")));
        }
        CellScheme::new(width, cells as u32, cells as u32)
    }

    /// Bins on `k` only; `x` and `y` fall into a single overflow cell.
    pub fn counts_only() -> Self {
        CellScheme { width: 1.0, x_cells: 0, y_cells: 0 }
    }

    /// Halves the width and doubles the cell counts, so every new cell lies
    /// inside exactly one old cell.
    pub fn refine(&self) -> Self {
        CellScheme { width: self.width / 2.0, x_cells: self.x_cells * 2, y_cells: self.y_cells * 2 }
    }

    pub fn cell(&self, s: &State) -> Cell {
        let bin = |v: f64, cap: u32| {
            let b = (v / self.width).floor();
            if b >= cap as f64 {
                cap
            } else {
                b as u32
            }
        };
        (s.k(), bin(s.x(), self.x_cells), bin(s.y(), self.y_cells))
    }

    /// Representative state of a cell (its center; overflow cells use the
    /// center of a virtual cell just past the boundary).
    pub fn center(&self, cell: Cell) -> Result<State> {
        State::new(cell.0, (cell.1 as f64 + 0.5) * self.width, (cell.2 as f64 + 0.5) * self.width)
    }

    /// Masses per cell, sorted by cell.
    pub fn bin(&self, mu: &EmpiricalMeasure) -> Vec<(Cell, f64)> {
        let mut cells: Vec<(Cell, f64)> = mu.atoms().iter().map(|(s, w)| (self.cell(s), *w)).collect();
        merge_sorted(&mut cells)
    }
}

fn merge_sorted<K: Ord + Copy>(entries: &mut Vec<(K, f64)>) -> Vec<(K, f64)> {
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<(K, f64)> = Vec::with_capacity(entries.len());
    for &(key, w) in entries.iter() {
        match out.last_mut() {
            Some((last, acc)) if *last == key => *acc += w,
            _ => out.push((key, w)),
        }
    }
    out
}

/// Merges two key-sorted mass lists into `(key, mass1 − mass2)`.
fn sorted_differences<K: Ord + Copy>(a: &[(K, f64)], b: &[(K, f64)]) -> Vec<(K, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            out.push((a[i].0, a[i].1));
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            out.push((b[j].0, -b[j].1));
            j += 1;
        } else {
            out.push((a[i].0, a[i].1 - b[j].1));
            i += 1;
            j += 1;
        }
    }
    out
}

/// `(cell, μ1(cell) − μ2(cell))` over the cells charged by either measure,
/// sorted by cell.
pub(crate) fn cell_differences(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, scheme: &CellScheme) -> Vec<(Cell, f64)> {
    sorted_differences(&scheme.bin(mu1), &scheme.bin(mu2))
}

/// `Σ_cells |μ1(cell) − μ2(cell)|`, a lower bound on the total variation
/// distance in the mass-2 convention (values in `[0, 2]`).
pub fn tv_distance_proxy(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure, scheme: &CellScheme) -> f64 {
    cell_differences(mu1, mu2, scheme).iter().map(|(_, d)| d.abs()).sum()
}

/// Exact total variation (mass-2) between two atomic measures.
pub fn tv_distance_atomic(mu1: &EmpiricalMeasure, mu2: &EmpiricalMeasure) -> f64 {
    let masses = |mu: &EmpiricalMeasure| {
        let mut v: Vec<((u32, u64, u64), f64)> =
            mu.atoms().iter().map(|(s, w)| ((s.k(), s.x().to_bits(), s.y().to_bits()), *w)).collect();
        merge_sorted(&mut v)
    };
    sorted_differences(&masses(mu1), &masses(mu2)).iter().map(|(_, d)| d.abs()).sum()
}

/// Uniform time grid `0, Δ, 2Δ, …` ending exactly at `horizon`.
pub fn uniform_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidConfig(format!("horizon {horizon} must be positive")));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidConfig(format!("grid step {step} must be positive")));
    }
    let intervals = (horizon / step - 1e-9).ceil().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..intervals).map(|i| i as f64 * step).collect();
    grid.push(horizon);
    Ok(grid)
}

/// Index of the largest grid point `<= t`.
#[inline]
pub(crate) fn grid_index(grid: &[f64], t: f64) -> usize {
    grid.partition_point(|&s| s <= t).saturating_sub(1)
}

/// Time-indexed family of measures, piecewise constant and right-continuous
/// between grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFlow {
    grid: Vec<f64>,
    measures: Vec<EmpiricalMeasure>,
}

impl MeasureFlow {
    pub fn new(grid: Vec<f64>, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if grid.is_empty() || grid.len() != measures.len() {
            return Err(Error::InvalidFlow(format!(
                "grid has {} points but {} measures were given",
                grid.len(),
                measures.len()
            )));
        }
        if grid[0] != 0.0 {
            return Err(Error::InvalidFlow(format!("grid must start at 0, got {}", grid[0])));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || !grid.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidFlow("grid must be finite and strictly increasing".into()));
        }
        Ok(MeasureFlow { grid, measures })
    }

    /// The same measure at every grid point.
    pub fn constant(mu: EmpiricalMeasure, grid: Vec<f64>) -> Result<Self> {
        let measures = vec![mu; grid.len()];
        MeasureFlow::new(grid, measures)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    pub fn initial(&self) -> &EmpiricalMeasure {
        &self.measures[0]
    }

    pub fn terminal(&self) -> &EmpiricalMeasure {
        self.measures.last().expect("non-empty flow")
    }

    /// Measure at the largest grid point `<= t`.
    pub fn flow_at(&self, t: f64) -> Result<&EmpiricalMeasure> {
        if t.is_nan() || t < 0.0 || t > self.horizon() {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon() });
        }
        Ok(&self.measures[grid_index(&self.grid, t)])
    }

    /// Samples this flow on another grid (right-continuous step lookup).
    pub fn resample(&self, grid: &[f64]) -> Result<MeasureFlow> {
        let measures = grid.iter().map(|&t| self.flow_at(t).cloned()).collect::<Result<Vec<_>>>()?;
        MeasureFlow::new(grid.to_vec(), measures)
    }

    /// Per-grid-point kernel summaries.
    pub fn summarize(&self, kernel: &IntensityKernel) -> SummaryFlow {
        SummaryFlow {
            grid: self.grid.clone(),
            summaries: self.measures.iter().map(|m| kernel.summarize(m)).collect(),
        }
    }

    /// `sup_s tv_distance_proxy(self_s, other_s)` over the shared grid.
    pub fn sup_tv_proxy(&self, other: &MeasureFlow, scheme: &CellScheme) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidFlow("flows are defined on different grids".into()));
        }
        Ok(self
            .measures
            .iter()
            .zip(&other.measures)
            .map(|(a, b)| tv_distance_proxy(a, b, scheme))
            .fold(0.0, f64::max))
    }
}

/// A measure flow reduced to kernel summaries; this is what the simulator
/// reads when evaluating intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryFlow {
    pub(crate) grid: Vec<f64>,
    pub(crate) summaries: Vec<MeasureSummary>,
}

impl SummaryFlow {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    /// Summary at the largest grid point `<= t`, with `t` clamped to the grid.
    #[inline]
    pub fn at(&self, t: f64) -> &[f64] {
        &self.summaries[grid_index(&self.grid, t)]
    }

    /// Left limit at `t`: summary at the largest grid point `< t` (the
    /// first one when `t <= 0`).
    #[inline]
    pub fn at_left(&self, t: f64) -> &[f64] {
        &self.summaries[self.grid.partition_point(|&s| s < t).saturating_sub(1)]
    }

    pub fn at_index(&self, i: usize) -> &[f64] {
        &self.summaries[i]
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}
