//! Intensity kernels, their bounds, empirical measures and measure flows.

mod kernel;
mod measure;

pub use kernel::{IntensityKernel, KernelBounds, KernelSpec, MeasureSummary};
pub(crate) use measure::{cell_differences, grid_index};
pub use measure::{
    tv_distance_atomic, tv_distance_proxy, uniform_grid, Cell, CellScheme, EmpiricalMeasure, MeasureFlow,
    SummaryFlow,
};
