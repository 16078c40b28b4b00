//! Stochastic relay-based extremum-seeking control for multi-input,
//! single-output systems.
//!
//! The controller drives `p` input channels with relays whose gains are
//! randomized every sample. The randomization makes the channel rates linearly
//! independent over time, so the gradient of the measured cost can be
//! recovered from the cost derivative with least squares. Relays are pointed
//! against the sign of the estimated gradient, subject to a minimum hold time.
//!
//! Crate layout:
//!
//! * [`estimator`]: gradient identification (windowed batch least squares and
//!   recursive least squares with exponential forgetting).
//! * [`controller`]: configuration, relay state and the stepping control block.
//! * [`plants`]: quadratic static map and the Hammerstein first-order plant.
//! * [`harness`]: closed-loop scenarios, trajectory records and run metrics.

pub use nalgebra;

pub mod controller;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod plants;

pub use controller::{
    draw_gains, expected_oscillation, gains_from_draws, switching_frequency, Controller,
    ControllerOutput, Direction, EscConfig, Mode, RelayState,
};
pub use error::EscError;
pub use estimator::{batch_ls, GradientEstimate, GradientEstimator, RegressorSample, RlsState};
pub use harness::{
    compare_runs, preset, run_ensemble, run_scenario, run_scenario_with, GradientSource, PlantKind,
    RunMetrics, RunResult, Scenario, ScheduleEntry, SegmentMetrics, TradeoffReport,
    TrajectoryRecord, PRESET_NAMES,
};
pub use plants::{FirstOrderState, HammersteinPlant, Plant, QuadraticMap, StaticPlant};
