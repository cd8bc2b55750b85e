//! Task-parallel smoothed particle hydrodynamics.
//!
//! The engine decomposes the periodic domain into a hierarchy of rectangular
//! cells, turns the SPH density and force sums into self- and pair-interaction
//! tasks over those cells, and executes the resulting dependency graph on a
//! worker pool with conflict avoidance via hierarchical cell locks. Pair
//! interactions prune candidates by sweeping indices sorted along the cell-pair
//! axis. Validation cases (Sod shock tube, Sedov blast) ship with analytic
//! reference solutions.

pub mod analytic;
pub mod engine;
pub mod io;
pub mod kernel;
pub mod pairwise;
pub mod physics;
pub mod scheduler;
pub mod space;
pub mod taskgraph;
pub mod util;
