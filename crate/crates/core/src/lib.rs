//! Simulation and verification engine for mean-field GI/GI/1 queueing
//! processes.
//!
//! A particle's state is `(k, x, y)`: the number of customers, the time
//! since the last arrival and the elapsed service time of the customer in
//! service. Between jumps `x` and `y` grow at unit rate (`y` is frozen at 0
//! while the queue is empty); arrivals and services happen at intensities
//! `Λ±[t, X, μ] = ∫ λ±(t, X, Y) μ(dY)` that depend on the law `μ` of the
//! process itself.
//!
//! Modules:
//! * [`state`]: states, jump maps, drift and trajectories,
//! * [`intensity`]: kernels, bounds, empirical measures and flows,
//! * [`simulator`]: thinning-based particle simulation in three modes,
//! * [`generator`]: the generator and Dynkin/martingale residuals,
//! * [`girsanov`]: path densities between flows and TV estimators,
//! * [`fixedpoint`]: Picard iteration and the uniqueness experiment,
//! * [`tightness`]: tightness diagnostics over families of schemes,
//! * [`io`]: CSV and JSON formats.

pub mod error;
pub mod fixedpoint;
pub mod generator;
pub mod girsanov;
pub mod intensity;
pub mod io;
pub mod rng;
pub mod simulator;
pub mod state;
pub mod stats;
pub mod tightness;

pub use error::{Error, Result};
pub use intensity::{
    tv_distance_atomic, tv_distance_proxy, uniform_grid, CellScheme, EmpiricalMeasure, IntensityKernel, KernelBounds,
    KernelSpec, MeasureFlow, SummaryFlow,
};
pub use simulator::{simulate, FrozenHistory, InitialLaw, ParticleSystem, SimConfig, SimMode};
pub use state::{state_distance, JumpType, State, Trajectory, TrajectoryEvent};
