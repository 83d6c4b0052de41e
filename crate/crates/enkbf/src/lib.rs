//! Ensemble Kalman-Bucy filtering with coupled stepsize refinement.
//!
//! The crate simulates a signal/observation pair on a fine dyadic grid, runs
//! the classical (perturbed-observation) and modified (deterministic) ensemble
//! Kalman filters at several stepsizes on exact partial sums of the same
//! Brownian increments, and measures the strong coupling error against a
//! fine-grid reference run. Bound monitors track gain norms, ensemble spread
//! and covariance eigenvalues along the way.
//!
//! See the `examples/` directory for one runnable example per capability; the
//! `enkbf` binary exposes the same machinery as batch subcommands.

pub mod classical;
pub mod config;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod modified;
pub mod noise;
pub mod report;
pub mod truth;

pub use config::RunConfig;
pub use ensemble::{compute_stats, Ensemble, EnsembleStats};
pub use error::{Error, Result};
pub use grid::{grid_maps, GridMaps, GridSpec};
pub use harness::{
    fit_rate, run_coupled, run_experiment, ConvergenceReport, ExperimentPlan, MetricKind, Variant,
};
pub use model::{ModelKind, ModelSpec};
pub use modified::GainMode;
pub use noise::NoiseLattice;
