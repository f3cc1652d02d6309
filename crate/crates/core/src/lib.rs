//! Wave-packet simulation of predissociation under repeated measurement.
//!
//! A vibrationally excited quasibound state decays into one or more
//! continua. The crate propagates the coupled-channel Schrödinger equation
//! on a radial grid with a split-operator scheme, interrupts the evolution
//! with depletion or phase-randomization measurements every τ, and extracts
//! decay rates, branching fractions and golden-rule predictions.

// `!(x > 0.0)` is used throughout so that NaN fails the same checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod error;
pub mod grid;
pub mod measure;
pub mod model;
pub mod propagate;
pub mod runner;
pub mod units;

pub use config::{parse_config, Experiment, RunConfig};
pub use error::{Error, Result};
pub use grid::{ComplexField, RadialGrid, C64};
pub use measure::{MeasurementKind, MeasurementSchedule};
pub use model::{build_system, SystemParams, SystemSpec};
pub use propagate::{evolve, PropagatorConfig, Trajectory, WavePacket};
pub use runner::{run_experiment, simulate, sweep_tau, RunResult};
